"""Feature files, corpus manifests, minibatches and a synthetic speaker corpus."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

FEATURE_MAGIC = b"LGMF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_U32_MAX = 2 ** 32 - 1


class DataError(Exception):
    """Malformed or inconsistent data on disk or in a corpus."""


def write_feature_file(path, features):
    """Write a frames x feat_dim matrix as little-endian float32."""
    arr = np.asarray(features)
    if arr.ndim != 2:
        raise DataError("feature payload must be 2-D (frames, feat_dim)")
    frames, dim = arr.shape
    if frames < 1 or dim < 1:
        raise DataError("feature file needs at least one frame and one dimension")
    if frames > _U32_MAX or dim > _U32_MAX:
        raise DataError("feature dimensions overflow u32")
    payload = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, frames, dim))
        fh.write(payload.tobytes())


def read_feature_file(path):
    """Return the stored float32 matrix; raises :class:`DataError` on any header/payload problem."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, frames, dim = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    expected = frames * dim * 4
    body = blob[_HEADER.size:]
    if len(body) != expected:
        raise DataError(f"{path}: payload has {len(body)} bytes, header implies {expected}")
    if frames < 1 or dim < 1:
        raise DataError(f"{path}: empty feature matrix")
    return np.frombuffer(body, dtype="<f4").reshape(frames, dim).copy()


@dataclass
class Corpus:
    """Speaker -> utterance-id lists for each split, plus loaded features."""

    train: Dict[str, List[str]]
    test: Dict[str, List[str]]
    features: Dict[str, np.ndarray]
    root: Path = None

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise DataError(f"train and test speakers overlap: {sorted(overlap)[:10]}")
        for split in (self.train, self.test):
            for utts in split.values():
                for u in utts:
                    if u not in self.features:
                        raise DataError(f"no features for utterance {u}")

    @property
    def train_speakers(self):
        return sorted(self.train)

    @property
    def test_speakers(self):
        return sorted(self.test)

    def speaker_of(self):
        out = {}
        for split in (self.train, self.test):
            for spk, utts in split.items():
                for u in utts:
                    out[u] = spk
        return out


@dataclass
class SynthConfig:
    num_speakers: int = 20
    num_test_speakers: int = 8
    utterances_per_speaker: int = 10
    frames_per_utterance: int = 64
    feat_dim: int = 16
    inter_spread: float = 1.0
    intra_spread: float = 1.0
    smoothing_width: int = 5
    enroll_utterances: int = 3
    seed: int = 7

    def __post_init__(self):
        if self.inter_spread <= 0 or self.intra_spread < 0:
            raise ValueError("inter_spread must be positive and intra_spread nonnegative")
        if self.num_speakers < 2:
            raise ValueError("verification needs at least 2 training speakers")
        if self.num_test_speakers < 0 or self.utterances_per_speaker < 1:
            raise ValueError("invalid speaker/utterance counts")
        if self.frames_per_utterance < 1 or self.feat_dim < 1 or self.smoothing_width < 1:
            raise ValueError("frames, feat_dim and smoothing_width must be positive")
        if self.num_test_speakers and not 0 < self.enroll_utterances < self.utterances_per_speaker:
            raise ValueError("enroll_utterances must leave at least one test utterance per speaker")


def _smooth(frames, width):
    """Moving average along time, rescaled so white input keeps unit variance."""
    if width <= 1:
        return frames
    kernel = np.ones(width) / np.sqrt(width)
    padded = np.pad(frames, ((width - 1, 0), (0, 0)), mode="wrap")
    out = np.empty_like(frames)
    for j in range(frames.shape[1]):
        out[:, j] = np.convolve(padded[:, j], kernel, mode="valid")
    return out


def synth_corpus(cfg):
    """Generate a Gaussian-cluster speaker corpus in memory. Pure function of ``cfg``.

    Speaker means are drawn N(0, inter_spread^2) per feature dimension; each
    utterance is the speaker mean plus temporally smoothed noise whose per-frame
    standard deviation is ``intra_spread``.
    """
    rng = np.random.default_rng(cfg.seed)
    total = cfg.num_speakers + cfg.num_test_speakers
    means = cfg.inter_spread * rng.standard_normal((total, cfg.feat_dim))
    train, test, feats = {}, {}, {}
    for s in range(total):
        is_train = s < cfg.num_speakers
        spk = f"spk{s:03d}" if is_train else f"tst{s - cfg.num_speakers:03d}"
        utts = []
        for u in range(cfg.utterances_per_speaker):
            noise = rng.standard_normal((cfg.frames_per_utterance, cfg.feat_dim))
            x = means[s] + cfg.intra_spread * _smooth(noise, cfg.smoothing_width)
            uid = f"{spk}_u{u:02d}"
            # stored as float32 on disk; keep the in-memory copy identical
            feats[uid] = x.astype(np.float32)
            utts.append(uid)
        (train if is_train else test)[spk] = utts
    return Corpus(train, test, feats)


def enrollment_split(corpus, enroll_utterances):
    """Split each test speaker's utterances into enrollment and test lists."""
    enroll, probe = {}, []
    for spk in corpus.test_speakers:
        utts = corpus.test[spk]
        enroll[spk] = list(utts[:enroll_utterances])
        probe.extend(utts[enroll_utterances:])
    return enroll, probe


def make_trials(corpus, enroll_utterances):
    """Every enrolled test speaker against every held-out test utterance."""
    from .evaluation import Trial

    enroll, probe = enrollment_split(corpus, enroll_utterances)
    owner = corpus.speaker_of()
    return [Trial(owner[u] == spk, spk, u) for spk in enroll for u in probe]


def write_corpus(corpus, out_dir, enroll_utterances=3):
    """Write features, manifests, enrollment list and trial list under ``out_dir``."""
    from .evaluation import write_trials

    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    for split, name in ((corpus.train, "train"), (corpus.test, "test")):
        lines = []
        for spk in sorted(split):
            for uid in split[spk]:
                rel = f"feats/{uid}.lgmf"
                write_feature_file(out / rel, corpus.features[uid])
                lines.append(f"{spk} {uid} {rel}\n")
        (out / f"{name}_manifest.txt").write_text("".join(lines))
    if corpus.test:
        enroll, _ = enrollment_split(corpus, enroll_utterances)
        (out / "enroll_list.txt").write_text(
            "".join(f"{spk} {u}\n" for spk in enroll for u in enroll[spk]))
        write_trials(out / "trials.txt", make_trials(corpus, enroll_utterances))
    return out


def read_manifest(path):
    """Return ``[(speaker_id, utterance_id, relative_path), ...]``."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected '<speaker> <utterance> <path>'")
        rows.append(tuple(parts))
    return rows


def load_corpus(root):
    root = Path(root)
    splits, feats = {}, {}
    for name in ("train", "test"):
        split = {}
        mpath = root / f"{name}_manifest.txt"
        if mpath.exists():
            for spk, uid, rel in read_manifest(mpath):
                if uid in feats:
                    raise DataError(f"duplicate utterance id {uid}")
                feats[uid] = read_feature_file(root / rel)
                split.setdefault(spk, []).append(uid)
        splits[name] = split
    return Corpus(splits["train"], splits["test"], feats, root)


def make_batches(corpus, batch_size, chunk_frames, seed, epoch=0, min_frames=1):
    """Yield ``(features, labels)`` minibatches over one shuffled pass of the train split.

    Each utterance contributes one random crop of ``chunk_frames`` frames (the
    whole utterance if it is shorter; batches are then grouped by length).
    Labels index :attr:`Corpus.train_speakers`.
    """
    if not corpus.train:
        raise DataError("train split is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng([seed, epoch])
    index = {spk: i for i, spk in enumerate(corpus.train_speakers)}
    items = [(uid, index[spk]) for spk in corpus.train_speakers for uid in corpus.train[spk]]
    order = rng.permutation(len(items))
    for start in range(0, len(order), batch_size):
        feats, labels = [], []
        for i in order[start:start + batch_size]:
            uid, label = items[i]
            x = corpus.features[uid]
            if x.shape[0] < min_frames:
                raise DataError(f"utterance {uid} has {x.shape[0]} frames, encoder needs {min_frames}")
            if x.shape[0] > chunk_frames:
                off = int(rng.integers(0, x.shape[0] - chunk_frames + 1))
                x = x[off:off + chunk_frames]
            feats.append(np.asarray(x, dtype=np.float64))
            labels.append(label)
        lengths = {f.shape[0] for f in feats}
        if len(lengths) == 1:
            yield np.stack(feats), np.asarray(labels)
        else:
            for length in sorted(lengths):
                sel = [i for i, f in enumerate(feats) if f.shape[0] == length]
                yield np.stack([feats[i] for i in sel]), np.asarray([labels[i] for i in sel])
