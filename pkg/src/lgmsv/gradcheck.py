"""Certify analytic gradients against central finite differences."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .encoder import EncoderConfig, EncoderModel, encode_batch, encode_backward
from .lgm_loss import Batch, GMParams, LossConfig, lgm_loss, lgm_loss_backward
from .numerics import finite_diff_grad, relative_error

ALPHAS = (0.0, 0.01, 0.1, 0.3, 1.0)
LAMBDAS = (0.0, 0.1, 1.0)
TOLERANCE = 1e-4


@dataclass
class GradcheckReport:
    max_error: Dict[str, float] = field(default_factory=dict)
    cases: int = 0
    tolerance: float = TOLERANCE

    def record(self, group, err):
        self.max_error[group] = max(self.max_error.get(group, 0.0), err)

    @property
    def failed_groups(self):
        return [g for g, e in self.max_error.items() if not e <= self.tolerance]

    @property
    def passed(self):
        return not self.failed_groups

    def lines(self):
        out = [f"{g:<24s} max rel err {e:.3e}  {'ok' if e <= self.tolerance else 'FAIL'}"
               for g, e in sorted(self.max_error.items())]
        out.append(("PASS" if self.passed else "FAIL: " + ", ".join(self.failed_groups))
                   + f" ({self.cases} loss cases, tol {self.tolerance:g})")
        return out


def random_loss_case(rng, alphas=ALPHAS, lambdas=LAMBDAS):
    k = int(rng.integers(1, 9))
    d = int(rng.integers(1, 17))
    n = int(rng.integers(1, 9))
    gm = GMParams(rng.standard_normal((k, d)), rng.uniform(-1.0, 1.0, (k, d)))
    batch = Batch(gm.means[rng.integers(0, k, n)] + rng.standard_normal((n, d)), rng.integers(0, k, n))
    cfg = LossConfig(alpha=float(rng.choice(alphas)), lam=float(rng.choice(lambdas)))
    return batch, gm, cfg


def check_loss_case(batch, gm, cfg, epsilon=1e-5, corrupt=None):
    """Return {group: relative error} for one configuration."""
    g = lgm_loss_backward(batch, gm, cfg)
    analytic = {"lgm.embeddings": g.embeddings, "lgm.means": g.means, "lgm.log_variances": g.log_variances}
    if corrupt in analytic:
        analytic[corrupt] = analytic[corrupt] * 1.01 + 1e-3
    arrays = {"lgm.embeddings": batch.embeddings, "lgm.means": gm.means, "lgm.log_variances": gm.log_variances}
    numeric = finite_diff_grad(lambda: lgm_loss(batch, gm, cfg)[0], arrays, epsilon)
    return {k: relative_error(analytic[k], numeric[k]) for k in analytic}


def check_encoder(rng, epsilon=1e-5, corrupt=None):
    """Tiny network: 2 stages of 4 channels, one block each, 8x8 input."""
    cfg = EncoderConfig(input_feat_dim=8, block_channels=(4, 4), blocks_per_stage=1,
                        embedding_dim=6, min_frames=8)
    model = EncoderModel.create(cfg, seed=int(rng.integers(2 ** 31)))
    for p in model.params.values():
        # nonzero biases so every gradient path is exercised
        if p.value.ndim == 1:
            p.value[...] = 0.1 * rng.standard_normal(p.value.shape)
    x = rng.standard_normal((2, 8, 8))
    upstream = rng.standard_normal((2, cfg.embedding_dim))
    y, cache = encode_batch(model, x, cache=True)
    grads, g_in = encode_backward(model, cache, upstream, need_input_grad=True)
    if corrupt == "encoder.params":
        grads = {k: v * 1.01 + 1e-3 for k, v in grads.items()}
    if corrupt == "encoder.input":
        g_in = g_in * 1.01 + 1e-3

    def f():
        return float(np.sum(encode_batch(model, x) * upstream))

    num = finite_diff_grad(f, model.params, epsilon)
    num_in = finite_diff_grad(f, {"x": x}, epsilon)["x"]
    return {"encoder.params": max(relative_error(grads[k], num[k]) for k in grads),
            "encoder.input": relative_error(g_in, num_in)}


def run_gradcheck(seed=0, cases=100, alphas=ALPHAS, lambdas=LAMBDAS, encoder_cases=3,
                  corrupt=None, tolerance=TOLERANCE):
    """Run the loss suite and the tiny-encoder suite; ``corrupt`` names a group to sabotage."""
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance=tolerance)
    for _ in range(cases):
        for group, err in check_loss_case(*random_loss_case(rng, alphas, lambdas), corrupt=corrupt).items():
            report.record(group, err)
        report.cases += 1
    for _ in range(encoder_cases):
        for group, err in check_encoder(rng, corrupt=corrupt).items():
            report.record(group, err)
    return report
