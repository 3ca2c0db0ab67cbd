import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgmsv.evaluation import (ScoreSet, Trial, acc, align_scores, det_points, eer, eer_exhaustive,
                              read_scores, read_trials, write_det, write_scores, write_trials)

FIXTURE = ([0.9, 0.8, 0.7, 0.3], [0.6, 0.2, 0.1, 0.05])


def brute_acc(ss):
    """Accuracy at every midpoint/extreme threshold, by direct counting."""
    s = np.sort(np.unique(ss.scores))
    cands = np.r_[s[0] - 1, (s[:-1] + s[1:]) / 2, s[-1] + 1]
    best = 0.0
    for t in cands:
        correct = np.sum((ss.scores >= t) == ss.labels)
        best = max(best, correct / len(ss))
    return best


def test_perfect_separation():
    ss = ScoreSet.from_target_nontarget([0.9, 0.8], [0.1, 0.2])
    assert eer(ss).eer == 0.0
    assert acc(ss)[0] == 1.0


def test_inverted_labels():
    ss = ScoreSet.from_target_nontarget([0.1, 0.2], [0.9, 0.8])
    assert eer(ss).eer == 1.0


def test_hand_fixture_eer():
    ss = ScoreSet.from_target_nontarget(*FIXTURE)
    res = eer(ss)
    assert res.eer == 0.25
    assert res.threshold == 0.6
    assert eer_exhaustive(ss) == res


def test_hand_fixture_best_accuracy():
    # exhaustive sweep: accept {0.9, 0.8, 0.7} -> 3 hits + 4 correct rejections = 7/8
    ss = ScoreSet.from_target_nontarget(*FIXTURE)
    value, thr = acc(ss)
    assert value == brute_acc(ss) == 0.875
    # 0.3 ties 0.7 (accept all targets, reject three nontargets); the smaller wins
    assert thr == 0.3


def test_identical_scores_give_half_accuracy():
    ss = ScoreSet([1, 0, 1, 0], [0.5] * 4)
    assert acc(ss)[0] == 0.5
    assert eer(ss).eer == 0.5


def test_single_class_rejected():
    with pytest.raises(ValueError):
        eer(ScoreSet([1, 1], [0.1, 0.2]))
    with pytest.raises(ValueError):
        det_points(ScoreSet([0, 0], [0.1, 0.2]))
    with pytest.raises(ValueError):
        acc(ScoreSet([], []))


def test_nonfinite_scores_rejected():
    with pytest.raises(ValueError):
        ScoreSet([1, 0], [np.nan, 0.0])


def test_det_points_extremes_and_eer_point():
    ss = ScoreSet.from_target_nontarget(*FIXTURE)
    pts = det_points(ss, include_eer=True)
    assert pts[0][1:] == (1.0, 0.0)
    assert pts[-1][1:] == (0.0, 1.0)
    assert any(far == frr == 0.25 for _, far, frr in pts)


def test_interpolated_eer_point_inserted():
    ss = ScoreSet.from_target_nontarget([0.9, 0.4, 0.35], [0.5, 0.1])
    res = eer(ss)
    pts = det_points(ss, include_eer=True)
    assert any(far == frr == res.eer for _, far, frr in pts)
    assert res.step_eer >= res.eer - 1e-12


def _random_set(rng):
    n = int(rng.integers(5, 201))
    labels = rng.random(n) < rng.uniform(0.1, 0.9)
    labels[0], labels[1] = True, False
    scores = rng.standard_normal(n) + rng.uniform(0, 2) * labels
    if rng.random() < 0.3:
        scores = np.round(scores, 1)
    return ScoreSet(labels, scores)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_metric_invariants(seed):
    rng = np.random.default_rng(seed)
    ss = _random_set(rng)
    e = eer(ss)
    assert 0.0 <= e.eer <= 1.0
    assert abs(e.eer - eer_exhaustive(ss).eer) <= 1e-9
    a = acc(ss)[0]
    frac = ss.labels.mean()
    assert a >= max(frac, 1 - frac) - 1e-15
    assert abs(a - brute_acc(ss)) < 1e-12
    scale, shift = rng.uniform(0.1, 10), rng.uniform(-5, 5)
    ss2 = ScoreSet(ss.labels, ss.scores * 4.0 + shift) if scale else ss
    assert abs(eer(ss2).eer - e.eer) <= 1e-9
    pts = det_points(ss)
    far = [p[1] for p in pts]
    frr = [p[2] for p in pts]
    assert all(a >= b for a, b in zip(far, far[1:]))
    assert all(a <= b for a, b in zip(frr, frr[1:]))


def test_file_round_trips(tmp_path):
    trials = [Trial(True, "spkA", "u1"), Trial(False, "spkA", "u2")]
    write_trials(tmp_path / "t.txt", trials)
    assert read_trials(tmp_path / "t.txt") == trials
    write_scores(tmp_path / "s.txt", [("spkA", "u1", 0.123456789012), ("spkA", "u2", -1 / 3)])
    sm = read_scores(tmp_path / "s.txt")
    assert sm[("spkA", "u2")] == -1 / 3
    ss = align_scores(trials, sm)
    assert list(ss.labels) == [True, False]
    with pytest.raises(KeyError):
        align_scores(trials + [Trial(True, "spkB", "u3")], sm)
    write_det(tmp_path / "det.csv", det_points(ss))
    assert (tmp_path / "det.csv").read_text().splitlines()[0] == "threshold,far,frr"


def test_trial_file_rejects_bad_label(tmp_path):
    (tmp_path / "t.txt").write_text("2 a b\n")
    with pytest.raises(ValueError):
        read_trials(tmp_path / "t.txt")
