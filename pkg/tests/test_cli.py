import filecmp

import numpy as np
import pytest

from lgmsv.cli import main
from lgmsv.trainer import load_checkpoint

SMALL = ["--speakers", "4", "--test-speakers", "2", "--utterances", "4", "--frames", "24",
         "--feat-dim", "6", "--enroll-utterances", "2"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert run("synth", "--seed", 7, "--out", d, *SMALL) == 0
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus_dir):
    d = tmp_path_factory.mktemp("model")
    cfg = d / "run.cfg"
    cfg.write_text("[train]\nepochs = 2\nbatch_size = 8\nchunk_frames = 16\nlr = 0.01\n\n"
                   "[encoder]\nblock_channels = 4, 8\nembedding_dim = 8\n")
    ckpt = d / "lgm.ckpt"
    assert run("train", "--config", cfg, "--corpus", corpus_dir, "--loss", "lgm", "--alpha", "1.0",
               "--seed", 3, "--out", ckpt) == 0
    return ckpt, cfg


def test_synth_is_deterministic(tmp_path, corpus_dir):
    assert run("synth", "--seed", 7, "--out", tmp_path / "again", *SMALL) == 0
    cmp = filecmp.dircmp(corpus_dir, tmp_path / "again")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    sub = filecmp.dircmp(corpus_dir / "feats", tmp_path / "again" / "feats")
    assert not sub.diff_files
    assert "seed = 7" in (corpus_dir / "synth_config.txt").read_text()


def test_synth_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("synth", "--seed", 1)
    assert info.value.code == 1
    assert run("synth", "--speakers", 1, "--out", tmp_path / "x") == 1


def test_unknown_config_key_is_an_error(tmp_path, corpus_dir):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[train]\nepochz = 3\n")
    assert run("train", "--config", cfg, "--corpus", corpus_dir, "--out", tmp_path / "m.ckpt") == 1
    cfg.write_text("[nonsense]\na = 1\n")
    assert run("train", "--config", cfg, "--corpus", corpus_dir, "--out", tmp_path / "m.ckpt") == 1


def test_train_records_alpha(trained):
    ckpt, _ = trained
    ck = load_checkpoint(ckpt)
    assert ck.manifest["alpha"] == "1.0"
    assert ck.manifest["seed"] == "3"
    assert ck.manifest["epochs"] == "2"
    assert ck.gm is not None
    assert (ckpt.parent / "lgm.ckpt.report.csv").read_text().startswith("epoch,step,total,cls,lkd")


def test_train_triplet_has_no_gm_blobs(tmp_path, corpus_dir, trained):
    _, cfg = trained
    out = tmp_path / "trip.ckpt"
    assert run("train", "--config", cfg, "--corpus", corpus_dir, "--loss", "triplet", "--out", out) == 0
    assert not any(k.startswith("gm.") for k in load_checkpoint(out).blobs)


def test_full_pipeline(tmp_path, corpus_dir, trained, capsys):
    ckpt, _ = trained
    emb, spk, scores, det = (tmp_path / n for n in ("emb.txt", "spk.txt", "scores.txt", "det.csv"))
    assert run("embed", "--checkpoint", ckpt, "--manifest", corpus_dir / "test_manifest.txt", "--out", emb) == 0
    assert run("enroll", "--embeddings", emb, "--enroll-list", corpus_dir / "enroll_list.txt", "--out", spk) == 0
    for method in ("cosine", "neg_mahalanobis"):
        assert run("score", "--enrolled", spk, "--embeddings", emb, "--trials", corpus_dir / "trials.txt",
                   "--method", method, "--checkpoint", ckpt, "--out", scores) == 0
    capsys.readouterr()
    assert run("eval", "--scores", scores, "--trials", corpus_dir / "trials.txt", "--out", det) == 0
    out = capsys.readouterr().out
    assert "EER" in out and "ACC" in out
    assert det.read_text().splitlines()[0] == "threshold,far,frr"
    assert run("embed", "--checkpoint", ckpt, "--manifest", corpus_dir / "test_manifest.txt",
               "--binary", "--out", tmp_path / "embbin") == 0
    assert len(list((tmp_path / "embbin").glob("*.lgmf"))) == 8


def test_self_score_is_one(tmp_path):
    (tmp_path / "e.txt").write_text("a\t0.6 0.8\n")
    (tmp_path / "t.txt").write_text("1 a a\n")
    assert run("score", "--enrolled", tmp_path / "e.txt", "--embeddings", tmp_path / "e.txt",
               "--trials", tmp_path / "t.txt", "--out", tmp_path / "s.txt") == 0
    assert float((tmp_path / "s.txt").read_text().split()[2]) == 1.0


def test_score_missing_ids(tmp_path, capsys):
    (tmp_path / "e.txt").write_text("a\t0.6 0.8\n")
    (tmp_path / "t.txt").write_text("".join(f"1 a u{i}\n" for i in range(12)))
    rc = run("score", "--enrolled", tmp_path / "e.txt", "--embeddings", tmp_path / "e.txt",
             "--trials", tmp_path / "t.txt", "--out", tmp_path / "s.txt")
    assert rc == 2
    err = capsys.readouterr().err
    assert "12 test utterances missing" in err
    assert "u9" in err and "u10" not in err


def test_eval_perfect_fixture(tmp_path, capsys):
    (tmp_path / "t.txt").write_text("1 a x\n1 a y\n0 a z\n0 a w\n")
    (tmp_path / "s.txt").write_text("a x 0.9\na y 0.8\na z 0.1\na w 0.2\n")
    assert run("eval", "--scores", tmp_path / "s.txt", "--trials", tmp_path / "t.txt") == 0
    out = capsys.readouterr().out
    assert "EER 0.0000" in out and "ACC 1.0000" in out


def test_gradcheck_pass_and_fault_injection(capsys):
    assert run("gradcheck", "--cases", 10, "--seed", 1) == 0
    assert "PASS" in capsys.readouterr().out
    assert run("gradcheck", "--cases", 3, "--corrupt", "lgm.means") == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and "lgm.means" in out.splitlines()[-1]


def test_gradcheck_alpha_zero_subset_matches_plain_path():
    from lgmsv.gradcheck import random_loss_case
    from lgmsv.lgm_loss import lgm_loss_backward, LossConfig
    rng = np.random.default_rng(0)
    for _ in range(20):
        batch, gm, cfg = random_loss_case(rng, alphas=(0.0,))
        a = lgm_loss_backward(batch, gm, cfg)
        # alpha = 0 must not touch the gradient at all
        b = lgm_loss_backward(batch, gm, LossConfig(alpha=0.0, lam=cfg.lam))
        np.testing.assert_array_equal(a.embeddings, b.embeddings)
    assert main(["gradcheck", "--cases", "5", "--alpha-zero"]) == 0
