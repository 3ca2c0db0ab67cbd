"""Command-line entry point: synth, train, embed, enroll, score, eval, gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import fields
from pathlib import Path


from . import data, evaluation, pipeline
from .encoder import EncoderConfig
from .gradcheck import run_gradcheck
from .numerics import NonFiniteError
from .trainer import TrainConfig, TrainingError, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("lgmsv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


# config sections and the keys each accepts
SECTIONS = {
    "synth": {f.name: f for f in fields(data.SynthConfig)},
    "train": {f.name: f for f in fields(TrainConfig) if f.name != "encoder"},
    "encoder": {f.name: f for f in fields(EncoderConfig)},
    "embed": {"chunk_frames": None},
    "score": {"method": None},
    "gradcheck": {"cases": None},
}


def _coerce(raw, default):
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace(" ", "").split(","))
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config(path):
    """Parse ``key = value`` sections; unknown sections or keys are errors."""
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SECTIONS[section]:
                raise UsageError(f"{path}: unknown key '{key}' in [{section}]")
            out.setdefault(section, {})[key] = raw
    return out


def _section_kwargs(cfg, section, defaults_obj):
    kw = {}
    for key, raw in cfg.get(section, {}).items():
        try:
            kw[key] = _coerce(raw, getattr(defaults_obj, key))
        except ValueError as exc:
            raise UsageError(f"[{section}] {key}: {exc}") from exc
    return kw


def _overrides(args, names):
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg):
    kw = _section_kwargs(cfg, "synth", data.SynthConfig())
    kw.update(_overrides(args, ["num_speakers", "num_test_speakers", "utterances_per_speaker",
                                "frames_per_utterance", "feat_dim", "inter_spread", "intra_spread",
                                "smoothing_width", "enroll_utterances", "seed"]))
    try:
        scfg = data.SynthConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    corpus = data.synth_corpus(scfg)
    out = data.write_corpus(corpus, args.out, scfg.enroll_utterances)
    (out / "synth_config.txt").write_text(
        "".join(f"{f.name} = {getattr(scfg, f.name)}\n" for f in fields(scfg)))
    print(f"wrote {len(corpus.features)} utterances to {out} (seed {scfg.seed})")


def _train_config(args, cfg):
    enc_kw = _section_kwargs(cfg, "encoder", EncoderConfig())
    kw = _section_kwargs(cfg, "train", TrainConfig())
    kw.update(_overrides(args, ["loss", "alpha", "lam", "epochs", "batch_size", "lr", "seed",
                                "chunk_frames", "checkpoint_interval"]))
    return kw, enc_kw


def cmd_train(args, cfg):
    kw, enc_kw = _train_config(args, cfg)
    corpus = data.load_corpus(args.corpus)
    feat_dims = {x.shape[1] for x in corpus.features.values()}
    if len(feat_dims) != 1:
        raise data.DataError(f"corpus mixes feature dimensions {sorted(feat_dims)}")
    enc_kw.setdefault("input_feat_dim", feat_dims.pop())
    try:
        tcfg = TrainConfig(encoder=EncoderConfig(**enc_kw), **kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    model, gm, report = train(tcfg, corpus, checkpoint_path=args.out)
    report_path = f"{args.out}.report.csv"
    report.write_csv(report_path)
    print(f"trained {tcfg.loss} (alpha={tcfg.alpha}, seed={tcfg.seed}) in {report.wall_clock:.1f}s; "
          f"checkpoint {args.out}, report {report_path}")


def _manifest_paths(path):
    base = Path(path).parent
    return [(spk, uid, base / rel) for spk, uid, rel in data.read_manifest(path)]


def cmd_embed(args, cfg):
    ckpt = load_checkpoint(args.checkpoint)
    chunk_frames = args.chunk_frames or int(cfg.get("embed", {}).get("chunk_frames", ckpt.config.chunk_frames))
    embs = {}
    for _, uid, path in _manifest_paths(args.manifest):
        embs[uid] = pipeline.utterance_embedding(ckpt.model, data.read_feature_file(path), chunk_frames)
    if args.binary:
        pipeline.write_embeddings_binary(args.out, embs)
    else:
        pipeline.write_embeddings(args.out, embs)
    print(f"wrote {len(embs)} embeddings to {args.out}")


def _require_ids(ids, available, what):
    missing = [i for i in ids if i not in available]
    if missing:
        raise data.DataError(f"{len(missing)} {what} missing from embeddings; first: {' '.join(missing[:10])}")


def cmd_enroll(args, cfg):
    embs = pipeline.read_embeddings(args.embeddings)
    groups = {}
    for lineno, line in enumerate(Path(args.enroll_list).read_text().splitlines(), 1):
        if line.strip():
            parts = line.split()
            if len(parts) != 2:
                raise data.DataError(f"{args.enroll_list}:{lineno}: expected '<speaker_id> <utterance_id>'")
            groups.setdefault(parts[0], []).append(parts[1])
    _require_ids([u for us in groups.values() for u in us], embs, "enrollment utterances")
    models = {spk: pipeline.enroll_embeddings(spk, [embs[u] for u in us]).embedding
              for spk, us in groups.items()}
    pipeline.write_embeddings(args.out, models)
    print(f"enrolled {len(models)} speakers to {args.out}")


def cmd_score(args, cfg):
    method = args.method or cfg.get("score", {}).get("method", "cosine")
    enrolled = pipeline.read_embeddings(args.enrolled)
    tests = pipeline.read_embeddings(args.embeddings)
    trials = evaluation.read_trials(args.trials)
    _require_ids(list(dict.fromkeys(t.enroll_id for t in trials)), enrolled, "enrolled speakers")
    _require_ids(list(dict.fromkeys(t.test_id for t in trials)), tests, "test utterances")
    whitening = None
    if method == "neg_mahalanobis":
        if not args.checkpoint:
            raise UsageError("neg_mahalanobis scoring needs --checkpoint with a trained mixture")
        gm = load_checkpoint(args.checkpoint).gm
        if gm is None:
            raise UsageError("checkpoint has no Gaussian-mixture parameters")
        whitening = pipeline.pooled_whitening(gm)
    try:
        rows = [(t.enroll_id, t.test_id, pipeline.score(enrolled[t.enroll_id], tests[t.test_id], method, whitening))
                for t in trials]
    except ValueError as exc:
        raise data.DataError(str(exc)) from exc
    evaluation.write_scores(args.out, rows)
    print(f"wrote {len(rows)} scores to {args.out}")


def cmd_eval(args, cfg):
    trials = evaluation.read_trials(args.trials)
    score_map = evaluation.read_scores(args.scores)
    try:
        ss = evaluation.align_scores(trials, score_map)
    except KeyError as exc:
        raise data.DataError(exc.args[0]) from exc
    e = evaluation.eer(ss)
    a, thr = evaluation.acc(ss)
    print(f"EER {e.eer:.4f} (threshold {e.threshold:.6g})")
    print(f"ACC {a:.4f} (threshold {thr:.6g})")
    if args.out:
        evaluation.write_det(args.out, evaluation.det_points(ss, include_eer=True))


def cmd_gradcheck(args, cfg):
    cases = args.cases or int(cfg.get("gradcheck", {}).get("cases", 100))
    alphas = (0.0,) if args.alpha_zero else None
    kw = {"alphas": alphas} if alphas else {}
    report = run_gradcheck(seed=args.seed if args.seed is not None else 0, cases=cases,
                           corrupt=args.corrupt, **kw)
    for line in report.lines():
        print(line)
    if not report.passed:
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="lgmsv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True, out_help="output path"):
        sp.add_argument("--config", help="key = value config file with sections")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required, help=out_help)

    s = sub.add_parser("synth", help="generate a synthetic speaker corpus")
    common(s, out_help="corpus directory")
    s.add_argument("--speakers", dest="num_speakers", type=int)
    s.add_argument("--test-speakers", dest="num_test_speakers", type=int)
    s.add_argument("--utterances", dest="utterances_per_speaker", type=int)
    s.add_argument("--frames", dest="frames_per_utterance", type=int)
    s.add_argument("--feat-dim", type=int)
    s.add_argument("--inter-spread", type=float)
    s.add_argument("--intra-spread", type=float)
    s.add_argument("--smoothing", dest="smoothing_width", type=int)
    s.add_argument("--enroll-utterances", type=int)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train an encoder (L-GM or triplet)")
    common(t, out_help="checkpoint path")
    t.add_argument("--corpus", required=True)
    t.add_argument("--loss", choices=["lgm", "triplet"])
    t.add_argument("--alpha", type=float)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--chunk-frames", type=int)
    t.add_argument("--checkpoint-interval", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="embed utterances listed in a manifest")
    common(e, out_help="embedding file (or directory with --binary)")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--chunk-frames", type=int)
    e.add_argument("--binary", action="store_true")
    e.set_defaults(func=cmd_embed)

    n = sub.add_parser("enroll", help="average utterance embeddings per speaker")
    common(n, out_help="speaker embedding file")
    n.add_argument("--embeddings", required=True)
    n.add_argument("--enroll-list", required=True)
    n.set_defaults(func=cmd_enroll)

    c = sub.add_parser("score", help="score a trial list")
    common(c, out_help="score file")
    c.add_argument("--enrolled", required=True)
    c.add_argument("--embeddings", required=True)
    c.add_argument("--trials", required=True)
    c.add_argument("--method", choices=["cosine", "neg_mahalanobis"])
    c.add_argument("--checkpoint")
    c.set_defaults(func=cmd_score)

    v = sub.add_parser("eval", help="ACC / EER / DET from scores and trials")
    common(v, out_required=False, out_help="optional DET csv")
    v.add_argument("--scores", required=True)
    v.add_argument("--trials", required=True)
    v.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="certify analytic gradients")
    common(g, out_required=False)
    g.add_argument("--cases", type=int)
    g.add_argument("--alpha-zero", action="store_true", help="restrict loss cases to alpha = 0")
    g.add_argument("--corrupt", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = read_config(args.config)
        rc = args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, TrainingError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return rc or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
