"""Held-out verification runs and the margin-coefficient sweep."""
from __future__ import annotations

from dataclasses import dataclass, replace

from scipy.stats import spearmanr

from .data import enrollment_split, make_trials
from .evaluation import ScoreSet, acc, eer
from .pipeline import enroll_embeddings, pooled_whitening, score, utterance_embedding
from .trainer import TrainConfig, train

SWEEP_ALPHAS = (0.0, 0.01, 0.1, 0.3, 1.0)



@dataclass
class VerificationResult:
    eer: float
    acc: float
    scores: ScoreSet


def embed_corpus_split(model, corpus, utterance_ids, chunk_frames):
    return {u: utterance_embedding(model, corpus.features[u], chunk_frames) for u in utterance_ids}


def evaluate_verification(model, corpus, enroll_utterances=3, chunk_frames=32,
                          method="cosine", gm=None):
    """Enroll each test speaker, score every trial, return EER/ACC."""
    enroll_map, probe = enrollment_split(corpus, enroll_utterances)
    needed = [u for us in enroll_map.values() for u in us] + probe
    embs = embed_corpus_split(model, corpus, needed, chunk_frames)
    speakers = {spk: enroll_embeddings(spk, [embs[u] for u in us]) for spk, us in enroll_map.items()}
    whitening = pooled_whitening(gm) if method == "neg_mahalanobis" else None
    trials = make_trials(corpus, enroll_utterances)
    vals = [score(speakers[t.enroll_id], embs[t.test_id], method, whitening) for t in trials]
    ss = ScoreSet.from_trials(trials, vals)
    return VerificationResult(eer(ss).eer, acc(ss)[0], ss)


@dataclass
class SweepRow:
    alpha: float
    eer: float
    acc: float
    first_epoch_loss: float
    final_epoch_loss: float
    train_accuracy: float


def run_alpha_sweep(corpus, base_config=None, alphas=SWEEP_ALPHAS, enroll_utterances=3,
                    method="cosine", checkpoint_dir=None):
    """Train one L-GM model per alpha (identical seeds) and score held-out trials."""
    base_config = base_config or TrainConfig()
    rows = []
    for a in alphas:
        cfg = replace(base_config, loss="lgm", alpha=float(a))
        path = None
        if checkpoint_dir is not None:
            path = f"{checkpoint_dir}/lgm_alpha{a:g}.ckpt"
        model, gm, rep = train(cfg, corpus, checkpoint_path=path)
        res = evaluate_verification(model, corpus, enroll_utterances, cfg.chunk_frames, method, gm)
        rows.append(SweepRow(a, res.eer, res.acc, rep.epoch_mean_loss(0),
                             rep.epoch_mean_loss(cfg.epochs - 1), rep.epoch_accuracy[-1]))
    return rows


def sweep_spearman(rows):
    rho, _ = spearmanr([r.alpha for r in rows], [r.eer for r in rows])
    return float(rho)


def format_sweep(rows):
    out = ["alpha     EER(%)   ACC(%)  train-acc"]
    for r in rows:
        out.append(f"{r.alpha:<8g} {100 * r.eer:7.2f} {100 * r.acc:8.2f} {100 * r.train_accuracy:9.2f}")
    return "\n".join(out)
