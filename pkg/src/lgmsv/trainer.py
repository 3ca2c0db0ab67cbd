"""Joint training of the encoder and the Gaussian-mixture head; checkpoint I/O."""
from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .data import make_batches
from .encoder import EncoderConfig, EncoderModel, encode_batch, encode_backward, init_params
from .lgm_loss import Batch, GMParams, LossConfig, _class_logits, _distances, batch_triplet_loss, lgm_loss_backward
from .numerics import NonFiniteError, ParamSet, make_optimizer

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"LGMC"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class TrainConfig:
    loss: str = "lgm"
    alpha: float = 1.0
    lam: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 1.0          # multiplicative, applied after every epoch
    optimizer: str = "adam"
    momentum: float = 0.9          # sgd only
    seed: int = 0
    chunk_frames: int = 32
    triplet_margin: float = 0.2
    variance_floor: float = 1e-6
    checkpoint_interval: int = 0   # epochs; 0 disables intermediate checkpoints
    checkpoint_path: Optional[str] = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.loss not in ("lgm", "triplet"):
            raise ValueError(f"loss must be 'lgm' or 'triplet', got {self.loss!r}")
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid epochs / batch_size / lr")

    def loss_config(self):
        return LossConfig(alpha=self.alpha, lam=self.lam, variance_floor=self.variance_floor)


@dataclass
class StepRecord:
    epoch: int
    step: int
    total: float
    cls: float
    lkd: float


@dataclass
class TrainReport:
    steps: List[StepRecord] = field(default_factory=list)
    epoch_accuracy: List[float] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint_path: Optional[str] = None

    def epoch_mean_loss(self, epoch):
        vals = [r.total for r in self.steps if r.epoch == epoch]
        return float(np.mean(vals)) if vals else float("nan")

    def write_csv(self, path):
        lines = ["epoch,step,total,cls,lkd\n"]
        lines += [f"{r.epoch},{r.step},{r.total:.17g},{r.cls:.17g},{r.lkd:.17g}\n" for r in self.steps]
        Path(path).write_text("".join(lines))


def classify_train_sample(x, gm):
    """Posterior argmax; ``np.argmax`` breaks ties toward the smaller index."""
    x = np.array(x, dtype=np.float64, ndmin=2)
    d, _, _ = _distances(x, gm)
    logits = _class_logits(d, None, gm, None)
    return int(np.argmax(logits[0]))


def _classify_batch(x, gm):
    d, _, _ = _distances(x, gm)
    return np.argmax(_class_logits(d, None, gm, None), axis=1)


def train(config, corpus, checkpoint_path=None):
    """Train and return ``(EncoderModel, GMParams or None, TrainReport)``."""
    t0 = time.time()
    ss = np.random.SeedSequence(config.seed)
    init_seed, gm_seed = ss.spawn(2)
    enc_cfg = config.encoder
    model = EncoderModel(enc_cfg, init_params(enc_cfg, np.random.default_rng(init_seed)))
    num_classes = len(corpus.train_speakers)
    gm = None
    params = ParamSet()
    for k, p in model.params.items():
        params[k] = p
    if config.loss == "lgm":
        gm = GMParams.init(num_classes, enc_cfg.embedding_dim, np.random.default_rng(gm_seed))
        # share storage so optimizer updates land in the GMParams arrays
        params.add("gm.means", gm.means)
        params.add("gm.log_variances", gm.log_variances)
        gm.means = params["gm.means"].value
        gm.log_variances = params["gm.log_variances"].value
    opt = make_optimizer(config.optimizer, params, config.lr,
                         **({"momentum": config.momentum} if config.optimizer == "sgd" else {}))
    loss_cfg = config.loss_config()
    report = TrainReport()
    ckpt_path = checkpoint_path or config.checkpoint_path
    step = 0
    for epoch in range(config.epochs):
        correct = seen = 0
        for feats, labels in make_batches(corpus, config.batch_size, config.chunk_frames,
                                          config.seed, epoch, enc_cfg.min_frames):
            try:
                emb, cache = encode_batch(model, feats, cache=True)
                if gm is not None:
                    g = lgm_loss_backward(Batch(emb, labels), gm, loss_cfg)
                    rec = StepRecord(epoch, step, g.total, g.cls, g.lkd)
                    g_emb = g.embeddings
                    extra = {"gm.means": g.means, "gm.log_variances": g.log_variances}
                    correct += int(np.sum(_classify_batch(emb, gm) == labels))
                    seen += labels.size
                else:
                    value, g_emb, _ = batch_triplet_loss(emb, labels, config.triplet_margin)
                    rec = StepRecord(epoch, step, value, 0.0, 0.0)
                    extra = {}
                if not np.isfinite(rec.total):
                    raise NonFiniteError("loss is not finite")
                enc_grads, _ = encode_backward(model, cache, g_emb)
                enc_grads.update(extra)
                params.set_grads(enc_grads)
                opt.step()
            except NonFiniteError as exc:
                raise TrainingError(step, str(exc)) from exc
            if gm is not None:
                gm.apply_variance_floor(loss_cfg.variance_floor)
            report.steps.append(rec)
            step += 1
        report.epoch_accuracy.append(correct / seen if seen else float("nan"))
        opt.state.lr *= config.lr_decay
        log.info("epoch %d mean loss %.4f acc %.3f", epoch, report.epoch_mean_loss(epoch),
                 report.epoch_accuracy[-1])
        if ckpt_path and config.checkpoint_interval and (epoch + 1) % config.checkpoint_interval == 0:
            save_checkpoint(ckpt_path, model, gm, config)
    if ckpt_path:
        save_checkpoint(ckpt_path, model, gm, config)
        report.checkpoint_path = str(ckpt_path)
    report.wall_clock = time.time() - t0
    return model, gm, report


# ---------------------------------------------------------------------------
# checkpoint: LGMC | u32 version | u32 len + manifest | u32 count + blobs
# blob: u32 len + name | u32 ndim | ndim * u32 | float64 payload (little-endian)

def _manifest(config):
    items = []
    for f in fields(config):
        if f.name in ("encoder", "checkpoint_path"):
            continue
        items.append((f.name, getattr(config, f.name)))
    for f in fields(config.encoder):
        v = getattr(config.encoder, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(i) for i in v)
        items.append((f"encoder.{f.name}", v))
    return "".join(f"{k} = {v}\n" for k, v in items)


def _parse_manifest(text):
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _coerce(value, typ, default):
    if isinstance(default, bool):
        return value == "True"
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(","))
    if default is None:
        return None if value == "None" else value
    return type(default)(value)


def config_from_manifest(manifest):
    enc_defaults = EncoderConfig()
    enc_kw = {f.name: _coerce(manifest[f"encoder.{f.name}"], f.type, getattr(enc_defaults, f.name))
              for f in fields(EncoderConfig) if f"encoder.{f.name}" in manifest}
    defaults = TrainConfig()
    kw = {}
    for f in fields(TrainConfig):
        if f.name in manifest and f.name not in ("encoder", "checkpoint_path"):
            kw[f.name] = _coerce(manifest[f.name], f.type, getattr(defaults, f.name))
    return TrainConfig(encoder=EncoderConfig(**enc_kw), **kw)


def save_checkpoint(path, model, gm, config):
    blobs = [(k, p.value) for k, p in model.params.items()]
    if gm is not None:
        blobs += [("gm.means", gm.means), ("gm.log_variances", gm.log_variances), ("gm.priors", gm.priors)]
    manifest = _manifest(config).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(manifest)), manifest,
             struct.pack("<I", len(blobs))]
    for name, arr in blobs:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


@dataclass
class Checkpoint:
    config: TrainConfig
    manifest: dict
    model: EncoderModel
    gm: Optional[GMParams]
    blobs: dict


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    manifest = _parse_manifest(buf[off:off + mlen].decode("utf-8"))
    off += mlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    blobs = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) * 8
        if off + size > len(buf):
            raise ValueError(f"{path}: truncated blob {name}")
        blobs[name] = np.frombuffer(buf[off:off + size], dtype="<f8").reshape(shape).copy()
        off += size
    config = config_from_manifest(manifest)
    params = ParamSet()
    for k, v in blobs.items():
        if not k.startswith("gm."):
            params.add(k, v)
    model = EncoderModel(config.encoder, params)
    model.check_params()
    gm = None
    if "gm.means" in blobs:
        gm = GMParams(blobs["gm.means"], blobs["gm.log_variances"], blobs.get("gm.priors"))
    return Checkpoint(config, manifest, model, gm, blobs)
