"""Residual convolutional encoder: frames x features -> unit-norm embedding.

Layout per stage: a strided transition convolution (5x5, stride 2 by default)
followed by ReLU, then ``blocks_per_stage`` residual blocks ``h = F(x) + x``
with ``F = conv3x3 -> ReLU -> conv3x3`` and an identity shortcut. After the
last stage the map is averaged over time and frequency, projected to
``embedding_dim`` and length-normalized.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np

from .numerics import (DTYPE, NonFiniteError, ParamSet, conv2d, conv2d_backward,
                       conv_output_size, ensure_finite, relu, relu_backward)


@dataclass
class EncoderConfig:
    input_feat_dim: int = 16
    block_channels: Tuple[int, ...] = (8, 16, 32)
    blocks_per_stage: int = 1
    transition_filter: Tuple[int, int] = (5, 5)
    transition_stride: Tuple[int, int] = (2, 2)
    block_filter: Tuple[int, int] = (3, 3)
    embedding_dim: int = 64
    min_frames: int = 8
    normalize: bool = True

    def __post_init__(self):
        self.block_channels = tuple(int(c) for c in self.block_channels)
        self.transition_filter = tuple(int(v) for v in self.transition_filter)
        self.transition_stride = tuple(int(v) for v in self.transition_stride)
        self.block_filter = tuple(int(v) for v in self.block_filter)
        if not self.block_channels:
            raise ValueError("block_channels must be nonempty")
        if min(self.block_channels) < 1 or self.embedding_dim < 1 or self.input_feat_dim < 1:
            raise ValueError("channel counts and dims must be positive")
        if self.blocks_per_stage < 0:
            raise ValueError("blocks_per_stage must be nonnegative")
        if any(f % 2 == 0 for f in self.block_filter):
            raise ValueError("block filter must be odd so blocks preserve shape")
        h, w = self.min_frames, self.input_feat_dim
        for _ in self.block_channels:
            h, w = self._transition_out(h, w)
            if h < 1 or w < 1:
                raise ValueError("configured strides shrink min_frames/input_feat_dim below 1")

    @property
    def transition_pad(self):
        return tuple(f // 2 for f in self.transition_filter)

    def _transition_out(self, h, w):
        (fh, fw), (sh, sw), (ph, pw) = self.transition_filter, self.transition_stride, self.transition_pad
        return conv_output_size(h, fh, sh, ph), conv_output_size(w, fw, sw, pw)

    def to_dict(self):
        return asdict(self)


def init_params(cfg, rng):
    """Fan-in scaled uniform weights, zero biases."""
    params = ParamSet()

    def uniform(shape, fan_in, gain=np.sqrt(6.0)):
        bound = gain / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    c_in = 1
    fh, fw = cfg.transition_filter
    bh, bw = cfg.block_filter
    for s, c in enumerate(cfg.block_channels):
        params.add(f"stage{s}.trans.w", uniform((c, c_in, fh, fw), c_in * fh * fw))
        params.add(f"stage{s}.trans.b", np.zeros(c))
        for b in range(cfg.blocks_per_stage):
            pre = f"stage{s}.block{b}"
            params.add(f"{pre}.conv1.w", uniform((c, c, bh, bw), c * bh * bw))
            params.add(f"{pre}.conv1.b", np.zeros(c))
            # small residual branch at init keeps the block close to identity
            params.add(f"{pre}.conv2.w", uniform((c, c, bh, bw), c * bh * bw, gain=np.sqrt(6.0) * 0.1))
            params.add(f"{pre}.conv2.b", np.zeros(c))
        c_in = c
    params.add("proj.w", uniform((c_in, cfg.embedding_dim), c_in, gain=np.sqrt(3.0)))
    params.add("proj.b", np.zeros(cfg.embedding_dim))
    return params


@dataclass
class EncoderModel:
    config: EncoderConfig
    params: ParamSet

    @classmethod
    def create(cls, config, seed=0):
        return cls(config, init_params(config, np.random.default_rng(seed)))

    def check_params(self):
        ref = init_params(self.config, np.random.default_rng(0))
        if list(ref) != list(self.params):
            raise ValueError("parameter names do not match encoder config")
        for k, p in ref.items():
            if p.value.shape != self.params[k].value.shape:
                raise ValueError(f"parameter {k} has shape {self.params[k].value.shape}, expected {p.value.shape}")


def _residual_branch(x, w1, b1, w2, b2, pad):
    a = conv2d(x, w1, b1, 1, pad)
    r = relu(a)
    return conv2d(r, w2, b2, 1, pad), a, r


def res_block_forward(x, w1, b1, w2, b2, pad=1):
    """Identity-shortcut residual unit, ``F(x) + x``."""
    f, _, _ = _residual_branch(x, w1, b1, w2, b2, pad)
    if f.shape != x.shape:
        raise ValueError(f"residual branch changes shape {x.shape} -> {f.shape}")
    return f + x


def _as_batch(features, cfg):
    x = np.asarray(features, DTYPE)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError("features must be (frames, feat_dim) or (N, frames, feat_dim)")
    if x.shape[2] != cfg.input_feat_dim:
        raise ValueError(f"expected feat_dim {cfg.input_feat_dim}, got {x.shape[2]}")
    if x.shape[1] < cfg.min_frames:
        raise ValueError(f"input has {x.shape[1]} frames, encoder needs at least {cfg.min_frames}")
    ensure_finite(x, "encoder input")
    return x[:, None, :, :]


def encode_batch(model, features, cache=False):
    """Embed a stack of equal-length inputs (N, frames, feat_dim) -> (N, E).

    With ``cache=True`` also returns the activations needed by :func:`encode_backward`.
    """
    cfg, p = model.config, model.params
    h = _as_batch(features, cfg)
    tape = []
    bpad = tuple(f // 2 for f in cfg.block_filter)
    for s in range(len(cfg.block_channels)):
        a = conv2d(h, p[f"stage{s}.trans.w"].value, p[f"stage{s}.trans.b"].value,
                   cfg.transition_stride, cfg.transition_pad)
        tape.append(("trans", s, h, a))
        h = relu(a)
        for b in range(cfg.blocks_per_stage):
            pre = f"stage{s}.block{b}"
            f, a1, r1 = _residual_branch(h, p[f"{pre}.conv1.w"].value, p[f"{pre}.conv1.b"].value,
                                         p[f"{pre}.conv2.w"].value, p[f"{pre}.conv2.b"].value, bpad)
            tape.append(("block", pre, h, a1, r1))
            h = h + f
    pooled = h.mean(axis=(2, 3))
    e = pooled @ p["proj.w"].value + p["proj.b"].value
    if cfg.normalize:
        norm = np.linalg.norm(e, axis=1, keepdims=True)
        if np.any(norm == 0.0):
            raise NonFiniteError("zero-norm embedding cannot be length-normalized")
        y = e / norm
    else:
        norm, y = None, e
    ensure_finite(y, "embedding")
    if cache:
        return y, {"tape": tape, "final_shape": h.shape, "pooled": pooled, "y": y, "norm": norm}
    return y


def encode(model, features):
    """Embed one utterance matrix (frames, feat_dim) -> (embedding_dim,)."""
    return encode_batch(model, np.asarray(features)[None])[0]


def encode_backward(model, cache, grad_out, need_input_grad=False):
    """Backpropagate ``dL/dy`` (N, E) through the encoder.

    Returns ``(param_grads, input_grad)``; ``input_grad`` is (N, frames, feat_dim)
    when requested, otherwise None.
    """
    cfg, p = model.config, model.params
    g = np.asarray(grad_out, DTYPE)
    grads = {k: np.zeros_like(v.value) for k, v in p.items()}
    if cfg.normalize:
        y, norm = cache["y"], cache["norm"]
        g = (g - y * np.sum(y * g, axis=1, keepdims=True)) / norm
    pooled = cache["pooled"]
    grads["proj.w"] = pooled.T @ g
    grads["proj.b"] = g.sum(axis=0)
    g_pool = g @ p["proj.w"].value.T
    n, c, hh, ww = cache["final_shape"]
    gh = np.broadcast_to(g_pool[:, :, None, None] / (hh * ww), (n, c, hh, ww)).copy()
    bpad = tuple(f // 2 for f in cfg.block_filter)
    tape = cache["tape"]
    for idx in range(len(tape) - 1, -1, -1):
        entry = tape[idx]
        if entry[0] == "block":
            _, pre, x_in, a1, r1 = entry
            # shortcut carries gh straight through; the branch adds its own part
            g_r1, gw2, gb2 = conv2d_backward(gh, r1, p[f"{pre}.conv2.w"].value, 1, bpad)
            g_a1 = relu_backward(g_r1, a1)
            g_x, gw1, gb1 = conv2d_backward(g_a1, x_in, p[f"{pre}.conv1.w"].value, 1, bpad)
            grads[f"{pre}.conv1.w"], grads[f"{pre}.conv1.b"] = gw1, gb1
            grads[f"{pre}.conv2.w"], grads[f"{pre}.conv2.b"] = gw2, gb2
            gh = gh + g_x
        else:
            _, s, x_in, a = entry
            g_a = relu_backward(gh, a)
            need = s > 0 or need_input_grad
            g_x, gw, gb = conv2d_backward(g_a, x_in, p[f"stage{s}.trans.w"].value,
                                          cfg.transition_stride, cfg.transition_pad, need_input_grad=need)
            grads[f"stage{s}.trans.w"], grads[f"stage{s}.trans.b"] = gw, gb
            gh = g_x
    for k, v in grads.items():
        ensure_finite(v, f"encoder gradient {k}")
    input_grad = gh[:, 0] if need_input_grad else None
    return grads, input_grad
