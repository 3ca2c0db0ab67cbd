"""Verification metrics over scored trial lists: EER, best-threshold accuracy, DET points.

Decision rule everywhere: accept iff ``score >= threshold``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class Trial:
    target: bool
    enroll_id: str
    test_id: str

    def __post_init__(self):
        if not self.enroll_id or not self.test_id:
            raise ValueError("trial ids must be nonempty")


class ScoreSet:
    """Parallel arrays of trial labels (True = target) and finite scores."""

    def __init__(self, labels, scores, trials=None):
        self.labels = np.asarray(labels, dtype=bool).reshape(-1)
        self.scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        if self.labels.shape != self.scores.shape:
            raise ValueError("labels and scores must have equal length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        self.trials = trials

    @classmethod
    def from_target_nontarget(cls, targets, nontargets):
        targets, nontargets = np.asarray(targets, float), np.asarray(nontargets, float)
        labels = np.r_[np.ones(len(targets), bool), np.zeros(len(nontargets), bool)]
        return cls(labels, np.r_[targets, nontargets])

    @classmethod
    def from_trials(cls, trials, scores):
        return cls([t.target for t in trials], scores, list(trials))

    def __len__(self):
        return self.scores.size

    @property
    def targets(self):
        return self.scores[self.labels]

    @property
    def nontargets(self):
        return self.scores[~self.labels]

    def _require_both(self):
        if self.labels.all() or not self.labels.any():
            raise ValueError("need at least one target and one nontarget trial")


class EERResult(NamedTuple):
    eer: float
    threshold: float
    step_eer: float


def _candidate_thresholds(scores):
    """Distinct scores ascending, then one threshold above everything (accept none)."""
    uniq = np.unique(scores)
    return np.r_[uniq, np.nextafter(uniq[-1], np.inf)]


def _rates(ss):
    thr = _candidate_thresholds(ss.scores)
    tar = np.sort(ss.targets)
    non = np.sort(ss.nontargets)
    frr = np.searchsorted(tar, thr, side="left") / tar.size
    far = 1.0 - np.searchsorted(non, thr, side="left") / non.size
    return thr, far, frr


def _crossing(thr, far, frr):
    diff = far - frr
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0 or i == 0:
        return float(far[i]), float(thr[i])
    w = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = far[i - 1] + w * (far[i] - far[i - 1])
    return float(eer), float(thr[i - 1] + w * (thr[i] - thr[i - 1]))


def eer(ss):
    """Equal error rate with linear interpolation between the bracketing operating points."""
    ss._require_both()
    thr, far, frr = _rates(ss)
    value, t = _crossing(thr, far, frr)
    step = float(np.min(np.maximum(far, frr)))
    return EERResult(value, t, step)


def eer_exhaustive(ss):
    """Reference EER: counts every candidate threshold directly, O(n^2).

    Shares only the decision rule and the interpolation convention with :func:`eer`.
    """
    ss._require_both()
    tar = [float(s) for s in ss.targets]
    non = [float(s) for s in ss.nontargets]
    cands = sorted(set(tar) | set(non))
    cands.append(float(np.nextafter(cands[-1], np.inf)))
    pts = []
    for t in cands:
        far = sum(1 for s in non if s >= t) / len(non)
        frr = sum(1 for s in tar if s < t) / len(tar)
        pts.append((t, far, frr))
    step = min(max(far, frr) for _, far, frr in pts)
    prev = None
    for t, far, frr in pts:
        if far - frr <= 0:
            if far == frr or prev is None:
                return EERResult(far, t, step)
            t0, far0, frr0 = prev
            d0, d1 = far0 - frr0, far - frr
            w = d0 / (d0 - d1)
            return EERResult(far0 + w * (far - far0), t0 + w * (t - t0), step)
        prev = (t, far, frr)
    raise AssertionError("FAR - FRR never changes sign")


def acc(ss):
    """Best accuracy over all thresholds; returns ``(accuracy, smallest maximizing threshold)``."""
    if len(ss) == 0:
        raise ValueError("empty score set")
    thr = _candidate_thresholds(ss.scores)
    tar = np.sort(ss.targets)
    non = np.sort(ss.nontargets)
    accepted_tar = tar.size - np.searchsorted(tar, thr, side="left")
    rejected_non = np.searchsorted(non, thr, side="left")
    correct = (accepted_tar + rejected_non) / len(ss)
    i = int(np.argmax(correct))
    return float(correct[i]), float(thr[i])


def det_points(ss, include_eer=False):
    """Operating points ``(threshold, FAR, FRR)`` over all distinct thresholds, ascending.

    With ``include_eer`` the interpolated equal-error point is inserted in order.
    """
    ss._require_both()
    thr, far, frr = _rates(ss)
    pts = [(float(t), float(a), float(r)) for t, a, r in zip(thr, far, frr)]
    if include_eer:
        e, t = _crossing(thr, far, frr)
        if not any(a == r == e for _, a, r in pts):
            pts.append((t, e, e))
            pts.sort(key=lambda p: (p[0], -p[1], p[2]))
    return pts


# ---------------------------------------------------------------------------
# files

def read_trials(path):
    trials = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("0", "1"):
            raise ValueError(f"{path}:{lineno}: expected '<1|0> <enroll_id> <test_id>'")
        trials.append(Trial(parts[0] == "1", parts[1], parts[2]))
    return trials


def write_trials(path, trials):
    Path(path).write_text("".join(f"{int(t.target)} {t.enroll_id} {t.test_id}\n" for t in trials))


def write_scores(path, rows):
    """rows: iterable of ``(enroll_id, test_id, score)``."""
    Path(path).write_text("".join(f"{e} {t} {s:.17g}\n" for e, t, s in rows))


def read_scores(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected '<enroll_id> <test_id> <score>'")
        out[(parts[0], parts[1])] = float(parts[2])
    return out


def align_scores(trials, score_map):
    """Build a ScoreSet in trial order; every trial must have a score."""
    missing = [(t.enroll_id, t.test_id) for t in trials if (t.enroll_id, t.test_id) not in score_map]
    if missing:
        raise KeyError(f"{len(missing)} trials have no score, e.g. {missing[:10]}")
    return ScoreSet.from_trials(trials, [score_map[(t.enroll_id, t.test_id)] for t in trials])


def write_det(path, points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "far", "frr"])
        for t, a, r in points:
            w.writerow([f"{t:.17g}", f"{a:.17g}", f"{r:.17g}"])
