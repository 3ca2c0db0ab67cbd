"""Array primitives, parameter containers, optimizers and a finite-difference
gradient oracle.

Arrays are plain ``numpy.ndarray`` in float64. Every public op refuses to hand
back NaN/Inf; :class:`NonFiniteError` is raised instead.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

DTYPE = np.float64


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


def ensure_finite(arr, what="array"):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(n, filt, stride, pad):
    return (n + 2 * pad - filt) // stride + 1


def add(a, b):
    a, b = np.asarray(a, DTYPE), np.asarray(b, DTYPE)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return ensure_finite(a + b, "add")


def multiply(a, b):
    a, b = np.asarray(a, DTYPE), np.asarray(b, DTYPE)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return ensure_finite(a * b, "multiply")


def matmul(a, b):
    a, b = np.asarray(a, DTYPE), np.asarray(b, DTYPE)
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return ensure_finite(a @ b, "matmul")


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad, x):
    """Gradient of relu at pre-activation ``x`` (subgradient 0 at the kink)."""
    return grad * (x > 0)


def reduce_mean(x, axis):
    return np.mean(x, axis=axis)


def reduce_sum(x, axis):
    return np.sum(x, axis=axis)


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D cross-correlation.

    x: (N, C_in, H, W), w: (C_out, C_in, kh, kw), b: (C_out,) or None.
    Output extent per axis is ``floor((in + 2*pad - filt) / stride) + 1``.
    """
    x = np.asarray(x, DTYPE)
    n, c_in, h, wd = x.shape
    c_out, c_w, kh, kw = w.shape
    if c_w != c_in:
        raise ValueError(f"conv2d: input has {c_in} channels, filter expects {c_w}")
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(wd, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: input {h}x{wd} too small for filter {kh}x{kw}")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    out = np.zeros((n, c_out, ho, wo), DTYPE)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
            out += np.einsum("nchw,oc->nohw", patch, w[:, :, i, j], optimize=True)
    if b is not None:
        out += b[None, :, None, None]
    return ensure_finite(out, "conv2d")


def conv2d_backward(grad, x, w, stride=1, pad=0, need_input_grad=True):
    """Return ``(dx, dw, db)`` for :func:`conv2d`. ``dx`` is None when not needed."""
    x = np.asarray(x, DTYPE)
    n, c_in, h, wd = x.shape
    _, _, kh, kw = w.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    ho, wo = grad.shape[2], grad.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    dw = np.zeros_like(w, dtype=DTYPE)
    dxp = np.zeros_like(xp) if need_input_grad else None
    for i in range(kh):
        for j in range(kw):
            hs = slice(i, i + sh * (ho - 1) + 1, sh)
            ws = slice(j, j + sw * (wo - 1) + 1, sw)
            dw[:, :, i, j] = np.einsum("nohw,nchw->oc", grad, xp[:, :, hs, ws], optimize=True)
            if need_input_grad:
                dxp[:, :, hs, ws] += np.einsum("nohw,oc->nchw", grad, w[:, :, i, j], optimize=True)
    db = grad.sum(axis=(0, 2, 3))
    dx = None
    if need_input_grad:
        dx = dxp[:, :, ph:ph + h, pw:pw + wd]
    return dx, dw, db


# ---------------------------------------------------------------------------
# parameters

@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.array(self.value, dtype=DTYPE)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ValueError("gradient shape must equal value shape")


class ParamSet(OrderedDict):
    """Ordered map of name -> :class:`Param`."""

    def add(self, name, value):
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        self[name] = Param(value)
        return self[name]

    def zero_grad(self):
        for p in self.values():
            p.grad[...] = 0.0

    def arrays(self):
        return OrderedDict((k, p.value) for k, p in self.items())

    def grads(self):
        return OrderedDict((k, p.grad) for k, p in self.items())

    def set_grads(self, grads):
        for k, g in grads.items():
            p = self[k]
            if g.shape != p.value.shape:
                raise ValueError(f"gradient for {k} has shape {g.shape}, expected {p.value.shape}")
            p.grad[...] = g

    def copy(self):
        out = ParamSet()
        for k, p in self.items():
            out[k] = Param(p.value.copy(), p.grad.copy())
        return out


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class OptimizerState:
    lr: float
    step_count: int = 0
    buffers: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    hyper: Dict[str, float] = field(default_factory=dict)


def _momentum_update(params, st):
    mu = st.hyper.get("momentum", 0.0)
    for name, p in params.items():
        ensure_finite(p.grad, f"gradient of {name}")
        if mu:
            buf = st.buffers.setdefault(name, {})
            if "velocity" not in buf:
                buf["velocity"] = p.grad.copy()
            else:
                buf["velocity"] = mu * buf["velocity"] + p.grad
            p.value -= st.lr * buf["velocity"]
        else:
            p.value -= st.lr * p.grad
    st.step_count += 1


def _adam_update(params, st):
    b1, b2, eps = st.hyper["beta1"], st.hyper["beta2"], st.hyper["eps"]
    st.step_count += 1
    t = st.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = ensure_finite(p.grad, f"gradient of {name}")
        buf = st.buffers.setdefault(name, {"m": np.zeros_like(p.value), "v": np.zeros_like(p.value)})
        buf["m"] = b1 * buf["m"] + (1.0 - b1) * g
        buf["v"] = b2 * buf["v"] + (1.0 - b2) * g * g
        p.value -= st.lr * (buf["m"] / c1) / (np.sqrt(buf["v"] / c2) + eps)


def sgd_step(params, state):
    """Apply one update in place. Adam if ``state.hyper`` carries betas, else momentum SGD."""
    if "beta1" in state.hyper:
        _adam_update(params, state)
    else:
        _momentum_update(params, state)
    return params


class SGD:
    """SGD with heavy-ball momentum: ``v = mu*v + g; p -= lr*v``."""

    def __init__(self, params, lr=0.01, momentum=0.0):
        self.params = params
        self.state = OptimizerState(lr=lr, hyper={"momentum": momentum})

    def step(self):
        sgd_step(self.params, self.state)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = OptimizerState(lr=lr, hyper={"beta1": beta1, "beta2": beta2, "eps": eps})

    def step(self):
        sgd_step(self.params, self.state)


def make_optimizer(name, params, lr, **kw):
    if name == "adam":
        return Adam(params, lr=lr, **kw)
    if name == "sgd":
        return SGD(params, lr=lr, **kw)
    raise ValueError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# gradient oracle

def finite_diff_grad(f, params, epsilon=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. every entry of ``params``.

    ``params`` is a :class:`ParamSet` or a mapping name -> ndarray. Arrays are
    perturbed in place and restored, so ``f`` should close over them.
    """
    arrays = params.arrays() if isinstance(params, ParamSet) else params
    out = OrderedDict()
    for name, arr in arrays.items():
        g = np.zeros(arr.shape, DTYPE)
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"parameter {name} must be contiguous for in-place probing")
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            fp = float(f())
            flat[idx] = orig - epsilon
            fm = float(f())
            flat[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"f non-finite when probing {name}[{idx}]")
            gflat[idx] = (fp - fm) / (2.0 * epsilon)
        out[name] = g
    return out


def relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(max|a|, max|n|, floor) over one parameter group."""
    a = np.asarray(analytic, DTYPE)
    n = np.asarray(numeric, DTYPE)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0), floor)
    return float(np.max(np.abs(a - n), initial=0.0) / scale)
