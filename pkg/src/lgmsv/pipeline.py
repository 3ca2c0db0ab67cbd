"""Chunked utterance embedding, enrollment averaging and pair scoring."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, read_feature_file, write_feature_file
from .encoder import encode, encode_batch

DEFAULT_CHUNK_SECONDS = 20.0


@dataclass
class Utterance:
    id: str
    features: np.ndarray
    frame_rate: float = 100.0

    def __post_init__(self):
        if np.asarray(self.features).shape[0] < 1:
            raise ValueError("utterance needs at least one frame")


@dataclass
class SpeakerModel:
    speaker_id: str
    embedding: np.ndarray
    utterance_count: int


def default_chunk_frames(frame_rate):
    return int(round(DEFAULT_CHUNK_SECONDS * frame_rate))


def _unit(v):
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("zero-norm embedding")
    return v / norm


def chunk(features, chunk_frames, min_frames=1):
    """Split into consecutive non-overlapping windows of ``chunk_frames``.

    A trailing remainder shorter than ``min_frames`` is merged into the previous
    chunk; an input shorter than ``chunk_frames`` is returned whole.
    """
    x = features.features if isinstance(features, Utterance) else np.asarray(features)
    n = x.shape[0]
    if chunk_frames < min_frames:
        raise ValueError("chunk_frames must be at least the encoder minimum")
    if n < min_frames:
        raise DataError(f"utterance has {n} frames, encoder needs {min_frames}")
    if n <= chunk_frames:
        return [x]
    bounds = list(range(0, n, chunk_frames))
    if n - bounds[-1] < min_frames:
        bounds.pop()
    bounds.append(n)
    return [x[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def utterance_embedding(model, utterance, chunk_frames):
    """Mean of per-chunk embeddings, renormalized to unit length."""
    chunks = chunk(utterance, chunk_frames, model.config.min_frames)
    if len(chunks) == 1:
        return encode(model, chunks[0])
    embs = []
    same = [c for c in chunks if c.shape[0] == chunks[0].shape[0]]
    embs.extend(encode_batch(model, np.stack(same)))
    embs.extend(encode(model, c) for c in chunks[len(same):])
    return _unit(np.mean(embs, axis=0))


def enroll_embeddings(speaker_id, embeddings):
    embs = np.asarray(embeddings, dtype=np.float64)
    if embs.ndim != 2 or embs.shape[0] == 0:
        raise ValueError("enrollment needs at least one utterance embedding")
    return SpeakerModel(speaker_id, _unit(embs.mean(axis=0)), embs.shape[0])


def enroll(model, utterances, chunk_frames, speaker_id="speaker"):
    """Average the utterance embeddings of one speaker into a unit-norm speaker vector."""
    if not utterances:
        raise ValueError("enrollment needs at least one utterance")
    return enroll_embeddings(speaker_id, [utterance_embedding(model, u, chunk_frames) for u in utterances])


def pooled_whitening(gm):
    """Diagonal variance averaged over the mixture's classes."""
    return np.mean(gm.variances, axis=0)


def score(enrolled, test, method="cosine", whitening=None):
    """Higher means more likely the same speaker.

    ``cosine`` is in [-1, 1]. ``neg_mahalanobis`` is ``-0.5 * sum((a-b)^2 / v)``
    with ``v`` the pooled diagonal variance of a trained mixture.
    """
    a = enrolled.embedding if isinstance(enrolled, SpeakerModel) else np.asarray(enrolled, float)
    b = np.asarray(test, float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if method == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise ValueError("zero-norm embedding")
        return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    if method == "neg_mahalanobis":
        if whitening is None:
            raise ValueError("neg_mahalanobis scoring needs a whitening variance")
        v = np.asarray(whitening, float)
        diff = a - b
        return float(-0.5 * np.sum(diff * diff / v))
    raise ValueError(f"unknown scoring method {method!r}")


# ---------------------------------------------------------------------------
# embedding files

def write_embeddings(path, embeddings):
    """Text format: ``id<TAB>d0 d1 ...`` per line."""
    lines = []
    for uid, e in embeddings.items():
        lines.append(uid + "\t" + " ".join(f"{v:.17g}" for v in np.asarray(e).ravel()) + "\n")
    Path(path).write_text("".join(lines))


def read_embeddings(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: expected '<id>\\t<values>'")
        uid, vals = line.split("\t", 1)
        out[uid] = np.array([float(v) for v in vals.split()])
    dims = {v.size for v in out.values()}
    if len(dims) > 1:
        raise DataError(f"{path}: embeddings have mixed dimensions {sorted(dims)}")
    return out


def write_embeddings_binary(directory, embeddings):
    """One feature-container file per id (1 frame x D, float32)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for uid, e in embeddings.items():
        write_feature_file(d / f"{uid}.lgmf", np.asarray(e).reshape(1, -1))


def read_embeddings_binary(directory):
    return {p.stem: read_feature_file(p)[0].astype(np.float64)
            for p in sorted(Path(directory).glob("*.lgmf"))}
