"""Training losses as deterministic value functions with analytic gradients.

Every loss returns a :class:`LossValue`.  ``grad`` is flattened and taken with
respect to the argument named in the function's docstring (always the
prediction).  :func:`finite_diff_check` verifies those gradients numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatch,
    EmptySet,
    NonPositiveScale,
    NonPositiveSigma,
    NotNormalized,
    NoValidAnchors,
    TooFewKeypoints,
)


@dataclass(frozen=True)
class LossConfig:
    tau_infonce: float = 1.0
    tau2: float = 0.02
    alpha: float = 1.0
    sl1_beta: float = 0.1
    eps: float = 1e-8
    huber_delta: float = 0.1

    def __post_init__(self):
        for name in ("tau_infonce", "tau2", "sl1_beta", "eps", "huber_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise FloatingPointError("loss value is not finite")
        if self.grad is not None:
            object.__setattr__(self, "grad", np.asarray(self.grad, dtype=np.float64).reshape(-1))

    def __float__(self):
        return float(self.value)


def huber(x, delta: float):
    """Elementwise Huber value and derivative."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    quad = ax <= delta
    value = np.where(quad, 0.5 * x * x, delta * (ax - 0.5 * delta))
    deriv = np.where(quad, x, delta * np.sign(x))
    return value, deriv


def smooth_l1(x, beta: float):
    """Elementwise smooth-L1 value and derivative (quadratic below ``beta``)."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    quad = ax < beta
    value = np.where(quad, 0.5 * x * x / beta, ax - 0.5 * beta)
    deriv = np.where(quad, x / beta, np.sign(x))
    return value, deriv


def _points(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise DimensionMismatch(f"{name} must be (N, 3), got {x.shape}")
    return x


def chamfer_one_sided(a, b, squared: bool = True) -> LossValue:
    """Mean over ``a`` of the distance to the nearest point of ``b``; grad w.r.t. ``a``.

    Ties go to the lowest index in ``b`` (``argmin`` order).
    """
    a = _points(a, "a")
    b = _points(b, "b")
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("chamfer needs non-empty point sets")
    diff = a[:, None, :] - b[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    nn = np.argmin(d2, axis=1)
    res = a - b[nn]
    n = len(a)
    if squared:
        dist2 = np.einsum("ij,ij->i", res, res)
        return LossValue(float(dist2.mean()), 2.0 * res / n)
    dist = np.linalg.norm(res, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    grad = np.where(dist[:, None] > 0, res / safe[:, None], 0.0) / n
    return LossValue(float(dist.mean()), grad)


def diversity_loss(kpts, tau2: float = 0.02) -> LossValue:
    """Hinge repulsion ``max(0, tau2 - |x - y|)^2`` over ordered pairs / M(M-1); grad w.r.t. ``kpts``."""
    x = _points(kpts, "kpts")
    m = len(x)
    if m < 2:
        raise TooFewKeypoints("diversity loss needs at least 2 keypoints")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    hinge = np.maximum(0.0, tau2 - dist)
    np.fill_diagonal(hinge, 0.0)
    norm = m * (m - 1)
    value = float((hinge**2).sum() / norm)
    safe = np.where(dist > 0, dist, 1.0)
    coef = np.where(dist > 0, -2.0 * hinge / safe, 0.0)
    # each unordered pair appears twice, hence the factor 2
    grad = 2.0 * np.einsum("ij,ijk->ik", coef, diff) / norm
    return LossValue(value, grad)


def pose_loss(pred, gt) -> LossValue:
    """``|R_gt - R|_F + |t_gt - t|_2 + |s_gt - s|_2``.

    ``pred``/``gt`` are ``(R, t, size)`` triples.  Grad w.r.t. the flat
    prediction ``[R.ravel(), t, size]`` (15 entries), zero where a term vanishes.
    """
    parts = []
    grads = []
    for p, g in zip(pred, gt):
        diff = np.asarray(p, dtype=np.float64).ravel() - np.asarray(g, dtype=np.float64).ravel()
        n = float(np.linalg.norm(diff))
        parts.append(n)
        grads.append(diff / n if n > 0 else np.zeros_like(diff))
    return LossValue(sum(parts), np.concatenate(grads))


def nocs_smooth_l1(pred, gt, beta: float = 0.1) -> LossValue:
    """Mean elementwise smooth-L1; grad w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionMismatch("pred and gt shapes differ")
    value, deriv = smooth_l1(pred - gt, beta)
    return LossValue(float(value.mean()), deriv / pred.size)


def info_nce(
    latents,
    positive_mask,
    weights=None,
    tau: float = 1.0,
    eps: float = 1e-8,
    norm_tol: Optional[float] = 1e-6,
) -> LossValue:
    """Supervised InfoNCE with log-sum weighted positives; grad w.r.t. ``latents``.

    For anchor ``i``: ``n_i = logsumexp_{j in P_i}(s_ij + log(w_ij + eps))`` and
    ``d_i = logsumexp_{j != i} s_ij`` with ``s = Z Z^T / tau``.  The loss is
    ``-mean_{i in V}(n_i - d_i)`` over anchors with at least one positive.
    Pass ``norm_tol=None`` to skip the unit-norm check (used by gradient checks).
    """
    z = np.asarray(latents, dtype=np.float64)
    p = np.asarray(positive_mask).astype(bool)
    n = len(z)
    if z.ndim != 2 or p.shape != (n, n):
        raise DimensionMismatch("latents must be (N, D) with an (N, N) mask")
    if n < 2:
        raise ValueError("InfoNCE needs at least 2 samples")
    if np.any(np.diag(p)):
        raise ValueError("positive mask diagonal must be zero")
    if norm_tol is not None and np.any(np.abs(np.linalg.norm(z, axis=1) - 1.0) > norm_tol):
        raise NotNormalized("latent rows must be unit-norm")
    w = np.ones((n, n)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n, n) or np.any(w < 0):
        raise ValueError("weights must be a non-negative (N, N) matrix")

    valid = p.any(axis=1)
    if not valid.any():
        raise NoValidAnchors("no anchor has a positive pair")
    s = z @ z.T / tau
    off = ~np.eye(n, dtype=bool)
    num_logits = np.where(p, s + np.log(w + eps), -np.inf)
    den_logits = np.where(off, s, -np.inf)
    n_i = logsumexp(num_logits[valid], axis=1)
    d_i = logsumexp(den_logits[valid], axis=1)
    nv = int(valid.sum())
    value = float(-(n_i - d_i).sum() / nv)

    pos_soft = np.zeros((n, n))
    den_soft = np.zeros((n, n))
    pos_soft[valid] = np.exp(num_logits[valid] - n_i[:, None])
    den_soft[valid] = np.exp(den_logits[valid] - d_i[:, None])
    g_s = -(pos_soft - den_soft) / nv
    grad = (g_s + g_s.T) @ z / tau
    return LossValue(value, grad)


def _forward_diff(x):
    """Forward differences along v (rows) and u (columns) for (H, W, C) input."""
    return x[1:, :, :] - x[:-1, :, :], x[:, 1:, :] - x[:, :-1, :]


def aleatoric_map_loss(pred, gt, sigma, alpha: float = 1.0, mask=None) -> LossValue:
    """Uncertainty-weighted map loss; grad w.r.t. ``pred``.

    Per valid pixel: ``sigma * |res|_1`` plus ``sigma * |grad res|_1`` for each
    forward difference whose two pixels are both valid, minus ``alpha * log sigma``.
    ``sigma`` broadcasts across channels.  Summed over pixels.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt = pred[..., None], gt[..., None]
    if pred.shape != gt.shape or pred.ndim != 3:
        raise DimensionMismatch("pred and gt must share an (H, W[, C]) shape")
    h, w_, _ = pred.shape
    sigma = np.asarray(sigma, dtype=np.float64)
    m = np.ones((h, w_), dtype=bool) if mask is None else np.asarray(mask).astype(bool)
    if sigma.shape != (h, w_) or m.shape != (h, w_):
        raise DimensionMismatch("sigma and mask must be (H, W)")
    if np.any(sigma[m] <= 0):
        raise NonPositiveSigma("sigma must be positive on masked pixels")

    res = pred - gt
    sig = np.where(m, sigma, 0.0)[..., None]
    grad = sig * np.sign(res)
    value = float((sig * np.abs(res)).sum())

    dv, du = _forward_diff(res)
    mv = (m[1:, :] & m[:-1, :])[..., None]
    mu = (m[:, 1:] & m[:, :-1])[..., None]
    sv = np.where(mv, sig[:-1, :, :], 0.0)
    su = np.where(mu, sig[:, :-1, :], 0.0)
    value += float((sv * np.abs(dv)).sum() + (su * np.abs(du)).sum())
    gv = sv * np.sign(dv)
    gu = su * np.sign(du)
    grad[1:, :, :] += gv
    grad[:-1, :, :] -= gv
    grad[:, 1:, :] += gu
    grad[:, :-1, :] -= gu

    value -= float(alpha * np.log(sigma[m]).sum())
    return LossValue(value, grad)


def scale_loss(pred_t_abs, gt_t_abs, pred_s_abs, gt_s_abs, pred_log_scale, gt_scale) -> LossValue:
    """``|t - t*|_1 + |s - s*|_1 + |log_s - log s*|``; grad w.r.t. ``[pred_t, pred_s, pred_log_scale]``."""
    if not gt_scale > 0:
        raise NonPositiveScale("ground-truth scale must be positive")
    dt = np.asarray(pred_t_abs, dtype=np.float64) - np.asarray(gt_t_abs, dtype=np.float64)
    ds = np.asarray(pred_s_abs, dtype=np.float64) - np.asarray(gt_s_abs, dtype=np.float64)
    dl = float(pred_log_scale) - float(np.log(gt_scale))
    value = float(np.abs(dt).sum() + np.abs(ds).sum() + abs(dl))
    return LossValue(value, np.concatenate([np.sign(dt), np.sign(ds), [np.sign(dl)]]))


def keypoint_loss(kpts, surface, recon, tau2: float = 0.02) -> LossValue:
    """Keypoint regularizer: squared chamfer + diversity + unsquared reconstruction chamfer."""
    return LossValue(
        chamfer_one_sided(kpts, surface, squared=True).value
        + diversity_loss(kpts, tau2).value
        + chamfer_one_sided(recon, surface, squared=False).value
    )


def total_loss(terms: dict, weights: Optional[dict] = None) -> float:
    """Weighted sum of named loss values (unit weights unless given)."""
    weights = weights or {}
    return float(sum(weights.get(k, 1.0) * float(v) for k, v in terms.items()))


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray = field(repr=False)
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


def finite_diff_check(
    loss_fn: Callable[[np.ndarray], LossValue],
    point,
    eps: float = 1e-6,
    tol: float = 1e-4,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare ``loss_fn(x).grad`` against central differences at ``point``.

    Per-coordinate relative error is ``|g_a - g_n| / max(|g_a|, |g_n|, floor * max|g|)``;
    the ``floor`` term keeps near-zero components from dominating the report.
    """
    x0 = np.asarray(point, dtype=np.float64).ravel().copy()
    analytic = np.asarray(loss_fn(x0).grad, dtype=np.float64).ravel()
    if analytic.shape != x0.shape:
        raise DimensionMismatch(f"gradient shape {analytic.shape} does not match point {x0.shape}")
    numeric = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += eps
        xm[i] -= eps
        numeric[i] = (loss_fn(xp).value - loss_fn(xm).value) / (2.0 * eps)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), max(floor * scale, 1e-300))
    rel = np.abs(analytic - numeric) / denom
    return GradCheckReport(analytic, numeric, rel, float(rel.max(initial=0.0)), tol)
