"""Large-margin Gaussian-mixture loss over an embedding space.

Each class k is a diagonal Gaussian N(mu_k, diag(exp(log_var_k))) with a fixed
prior p(k). For a sample x with label z the per-class logit is

    log p(k) - 0.5 * log|Sigma_k| - d_k - [k == z] * alpha * d_z

where ``d_k = 0.5 * (x - mu_k)^T Sigma_k^{-1} (x - mu_k)``. The classification
loss is the cross entropy of the softmax over those logits; the likelihood
term is the negative log density of x under its own class. Everything is
evaluated in the log domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .numerics import DTYPE, NonFiniteError, ensure_finite

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GMParams:
    means: np.ndarray
    log_variances: np.ndarray
    priors: np.ndarray = None

    def __post_init__(self):
        self.means = np.array(self.means, dtype=DTYPE, ndmin=2)
        self.log_variances = np.array(self.log_variances, dtype=DTYPE, ndmin=2)
        if self.means.shape != self.log_variances.shape:
            raise ValueError("means and log_variances must share shape (K, D)")
        k = self.means.shape[0]
        if self.priors is None:
            self.priors = np.full(k, 1.0 / k)
        self.priors = np.asarray(self.priors, dtype=DTYPE)
        if self.priors.shape != (k,):
            raise ValueError("priors must have length K")
        if np.any(self.priors < 0) or abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must be nonnegative and sum to 1")

    @property
    def num_classes(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def variances(self):
        return np.exp(self.log_variances)

    @classmethod
    def init(cls, num_classes, dim, rng, jitter=0.01):
        """Means near zero with small jitter, unit variances, uniform priors."""
        means = jitter * rng.standard_normal((num_classes, dim))
        return cls(means, np.zeros((num_classes, dim)))

    def apply_variance_floor(self, floor):
        np.maximum(self.log_variances, np.log(floor), out=self.log_variances)


@dataclass
class LossConfig:
    alpha: float = 0.0
    lam: float = 0.1
    variance_floor: float = 1e-6
    log_domain_stabilizer: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("alpha and lambda must be nonnegative")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")


@dataclass
class Batch:
    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.embeddings = np.array(self.embeddings, dtype=DTYPE, ndmin=2)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.embeddings.shape[0] < 1:
            raise ValueError("batch must hold at least one sample")
        if self.labels.shape[0] != self.embeddings.shape[0]:
            raise ValueError("one label per embedding")

    def check(self, gm):
        if self.embeddings.shape[1] != gm.dim:
            raise ValueError(f"embedding dim {self.embeddings.shape[1]} != GM dim {gm.dim}")
        if np.any(self.labels < 0) or np.any(self.labels >= gm.num_classes):
            raise ValueError("labels must lie in [0, K)")


def mahalanobis_sq(x, k, gm):
    """Half the squared Mahalanobis distance from ``x`` to class ``k``."""
    diff = np.asarray(x, DTYPE) - gm.means[k]
    return float(0.5 * np.sum(diff * diff / gm.variances[k]))


def _distances(x, gm):
    """(N, K) matrix of halved squared Mahalanobis distances, plus displacements."""
    diff = x[:, None, :] - gm.means[None, :, :]
    inv_var = np.exp(-gm.log_variances)
    d = 0.5 * np.einsum("nkd,kd->nk", diff * diff, inv_var)
    return d, diff, inv_var


def gaussian_log_density(x, k, gm):
    logdet = float(np.sum(gm.log_variances[k]))
    return -0.5 * gm.dim * LOG_2PI - 0.5 * logdet - mahalanobis_sq(x, k, gm)


def _class_logits(d, labels, gm, alpha):
    logdet = gm.log_variances.sum(axis=1)
    with np.errstate(divide="ignore"):
        log_prior = np.log(gm.priors)
    logits = log_prior[None, :] - 0.5 * logdet[None, :] - d
    if alpha is not None:
        rows = np.arange(d.shape[0])
        # margin m = alpha * d_z on the true class only; alpha == 0 subtracts exactly 0
        logits[rows, labels] -= alpha * d[rows, labels]
    return logits


def posterior(x, gm):
    """Class posterior p(k | x) for one sample, via max-subtracted log-sum-exp."""
    x = np.array(x, dtype=DTYPE, ndmin=2)
    d, _, _ = _distances(x, gm)
    logits = _class_logits(d, None, gm, None)[0]
    return np.exp(logits - logsumexp(logits))


def _cls_terms(batch, gm, alpha):
    d, diff, inv_var = _distances(batch.embeddings, gm)
    logits = _class_logits(d, batch.labels, gm, alpha)
    lse = logsumexp(logits, axis=1)
    if not np.all(np.isfinite(lse)):
        raise NonFiniteError("non-finite log-sum-exp in classification loss")
    rows = np.arange(d.shape[0])
    per_sample = lse - logits[rows, batch.labels]
    return per_sample, logits, lse, d, diff, inv_var


def classification_loss(batch, gm, cfg):
    batch.check(gm)
    per_sample, *_ = _cls_terms(batch, gm, cfg.alpha)
    loss = float(np.mean(per_sample))
    if not np.isfinite(loss):
        raise NonFiniteError("classification loss is not finite")
    # log-sum-exp can land a hair under the true logit
    return max(loss, 0.0)


def plain_classification_loss(batch, gm):
    """Cross entropy of the unmodified posterior (no margin term at all)."""
    batch.check(gm)
    per_sample, *_ = _cls_terms(batch, gm, None)
    return max(float(np.mean(per_sample)), 0.0)


def likelihood_regularization(batch, gm):
    """Mean negative log-likelihood of each sample under its own class.

    Normalized by the batch size so the weight is batch-size independent.
    """
    batch.check(gm)
    d, _, _ = _distances(batch.embeddings, gm)
    rows = np.arange(d.shape[0])
    z = batch.labels
    logdet = gm.log_variances.sum(axis=1)
    nll = 0.5 * gm.dim * LOG_2PI + 0.5 * logdet[z] + d[rows, z]
    return float(np.mean(nll))


def lgm_loss(batch, gm, cfg):
    """Return ``(total, cls, lkd)`` with ``total = cls + lam * lkd``."""
    cls = classification_loss(batch, gm, cfg)
    lkd = likelihood_regularization(batch, gm)
    total = cls + cfg.lam * lkd
    if not np.isfinite(total):
        raise NonFiniteError("L-GM loss is not finite")
    return total, cls, lkd


@dataclass
class LGMGrads:
    embeddings: np.ndarray
    means: np.ndarray
    log_variances: np.ndarray
    total: float = 0.0
    cls: float = 0.0
    lkd: float = 0.0


def lgm_loss_backward(batch, gm, cfg):
    """Analytic gradients of the total loss w.r.t. embeddings, means, log-variances.

    Returns an :class:`LGMGrads` that also carries the forward loss values.
    """
    batch.check(gm)
    n = batch.embeddings.shape[0]
    alpha, lam = cfg.alpha, cfg.lam
    per_sample, logits, lse, d, diff, inv_var = _cls_terms(batch, gm, alpha)
    rows = np.arange(n)
    z = batch.labels

    post = np.exp(logits - lse[:, None])
    g_logit = post.copy()
    g_logit[rows, z] -= 1.0                        # d cls_i / d logit_ik
    # d logit_ik / d d_ik = -1, and the true class carries an extra -alpha
    w = -g_logit
    w[rows, z] *= 1.0 + alpha
    w[rows, z] += lam                              # likelihood term: + d_z
    w /= n
    h = -0.5 * g_logit
    h[rows, z] += 0.5 * lam                        # likelihood term: + 0.5 log|Sigma_z|
    h /= n

    scaled = diff * inv_var[None, :, :]            # (N, K, D) = Sigma^-1 (x - mu)
    g_x = np.einsum("nk,nkd->nd", w, scaled)
    g_mu = -np.einsum("nk,nkd->kd", w, scaled)
    g_logvar = -0.5 * np.einsum("nk,nkd->kd", w, diff * scaled) + h.sum(axis=0)[:, None]

    for arr, name in ((g_x, "embeddings"), (g_mu, "means"), (g_logvar, "log_variances")):
        ensure_finite(arr, f"L-GM gradient w.r.t. {name}")

    cls = max(float(np.mean(per_sample)), 0.0)
    logdet = gm.log_variances.sum(axis=1)
    lkd = float(np.mean(0.5 * gm.dim * LOG_2PI + 0.5 * logdet[z] + d[rows, z]))
    return LGMGrads(g_x, g_mu, g_logvar, cls + lam * lkd, cls, lkd)


def margin_classification_check(x, z, gm, m):
    """True iff ``d_k - d_z > m`` for every class ``k != z``."""
    x = np.array(x, dtype=DTYPE, ndmin=2)
    d = _distances(x, gm)[0][0]
    others = np.delete(d, z)
    return bool(np.all(others - d[z] > m))


def _unit(v):
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("cannot length-normalize a zero vector")
    return v / norm, norm


def _unit_backward(g_u, u, norm):
    return (g_u - u * np.dot(u, g_u)) / norm


def triplet_loss(anchor, positive, negative, margin=0.2):
    """Hinge on cosine distances of length-normalized vectors.

    loss = max(0, (1 - cos(a, p)) - (1 - cos(a, n)) + margin)

    Returns ``(loss, (g_anchor, g_positive, g_negative))``; gradients are zero
    when the hinge is inactive.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    a, na = _unit(np.asarray(anchor, DTYPE))
    p, np_ = _unit(np.asarray(positive, DTYPE))
    q, nq = _unit(np.asarray(negative, DTYPE))
    value = np.dot(a, q) - np.dot(a, p) + margin
    if value <= 0.0:
        zero = np.zeros_like(a)
        return 0.0, (zero, zero.copy(), zero.copy())
    g_a = _unit_backward(q - p, a, na)
    g_p = _unit_backward(-a, p, np_)
    g_q = _unit_backward(a, q, nq)
    return float(value), (g_a, g_p, g_q)


def batch_triplet_loss(embeddings, labels, margin=0.2):
    """Mean in-batch triplet loss, hardest negative per anchor.

    Every (anchor, positive) pair with a shared label is used; the negative is
    the other-class sample most cosine-similar to the anchor. Returns
    ``(loss, grad_embeddings, num_triplets)``.
    """
    x = np.asarray(embeddings, DTYPE)
    labels = np.asarray(labels)
    n = x.shape[0]
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError("cannot length-normalize a zero vector")
    u = x / norms[:, None]
    sim = u @ u.T
    same = labels[:, None] == labels[None, :]
    grad = np.zeros_like(x)
    total, count = 0.0, 0
    for i in range(n):
        neg = np.where(~same[i])[0]
        pos = np.where(same[i])[0]
        pos = pos[pos != i]
        if neg.size == 0 or pos.size == 0:
            continue
        j_neg = neg[np.argmax(sim[i, neg])]
        for j in pos:
            val, (ga, gp, gn) = triplet_loss(x[i], x[j], x[j_neg], margin)
            total += val
            count += 1
            grad[i] += ga
            grad[j] += gp
            grad[j_neg] += gn
    if count == 0:
        return 0.0, grad, 0
    return total / count, grad / count, count
