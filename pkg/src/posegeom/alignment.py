"""Weighted Umeyama solvers and the pose-recovery procedures built on them.

All solvers take paired ``(N, 3)`` point sets and non-negative per-pair
weights.  Pairs with zero weight are dropped before any arithmetic, so they
can hold arbitrary (finite) garbage without affecting the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .camera import PointMap
from .errors import (
    DegenerateGeometry,
    DimensionMismatch,
    InsufficientPoints,
    NoConvergence,
    NonPositiveSize,
)
from .transforms import AnisoSimilarity, RigidTransform, Similarity

RANK_TOL = 1e-12
MIN_RELATIVE_PIXELS = 16


@dataclass(frozen=True)
class WeightedCorrespondences:
    src: np.ndarray
    dst: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.float64)
        dst = np.asarray(self.dst, dtype=np.float64)
        w = np.ones(len(src)) if self.w is None else np.asarray(self.w, dtype=np.float64).reshape(-1)
        if src.ndim != 2 or src.shape[1] != 3 or src.shape != dst.shape:
            raise DimensionMismatch(f"src {src.shape} and dst {dst.shape} must both be (N, 3)")
        if w.shape != (len(src),):
            raise DimensionMismatch("one weight per correspondence is required")
        if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst)) and np.all(np.isfinite(w))):
            raise ValueError("correspondences must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if len(src) < 3:
            raise InsufficientPoints(f"need at least 3 correspondences, got {len(src)}")
        if not w.sum() > 0:
            raise InsufficientPoints("all weights are zero")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "w", w)

    def active(self) -> "tuple[np.ndarray, np.ndarray, np.ndarray]":
        """Positive-weight pairs with weights normalized to sum 1."""
        keep = self.w > 0
        w = self.w[keep]
        return self.src[keep], self.dst[keep], w / w.sum()


@dataclass(frozen=True)
class AlignmentResult:
    transform: Union[Similarity, RigidTransform, AnisoSimilarity]
    rmse: float
    rank_ok: bool
    objective_history: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return max(len(self.objective_history) - 1, 0)


def _coerce(c, dst=None, w=None) -> WeightedCorrespondences:
    if isinstance(c, WeightedCorrespondences):
        return c
    return WeightedCorrespondences(c, dst, w)


def _procrustes(src, dst, w, with_scale):
    """Core weighted Umeyama on already-filtered, normalized weights.

    Returns ``(scale, R, t, rank_ok)``.
    """
    if len(w) < 3:
        raise InsufficientPoints(f"need at least 3 positive-weight pairs, got {len(w)}")
    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    xd = dst - mu_d
    var_s = float(w @ np.einsum("ij,ij->i", xs, xs))
    extent = max(float(np.abs(src).max()), 1.0)
    if var_s <= (1e-12 * extent) ** 2:
        raise DegenerateGeometry("source points are coincident under the weights")
    cov = (xd * w[:, None]).T @ xs
    u, d, vt = np.linalg.svd(cov)
    if d[0] <= 0 or d[1] <= RANK_TOL * d[0]:
        raise DegenerateGeometry("weighted cross-covariance has rank < 2")
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    r = (u * sign) @ vt
    scale = float(d @ sign) / var_s if with_scale else 1.0
    if not scale > 0:
        raise DegenerateGeometry("non-positive similarity scale")
    t = mu_d - scale * (r @ mu_s)
    return scale, r, t, bool(d[2] >= RANK_TOL * d[0])


def _rmse(pred, dst, w) -> float:
    res = pred - dst
    return float(np.sqrt(max(w @ np.einsum("ij,ij->i", res, res), 0.0)))


def umeyama_sim3(c, dst=None, w=None) -> AlignmentResult:
    """Weighted least-squares similarity ``dst ~ s R src + t``.

    Accepts either a :class:`WeightedCorrespondences` or ``(src, dst, w)``.
    """
    c = _coerce(c, dst, w)
    src, dst, w = c.active()
    s, r, t, rank_ok = _procrustes(src, dst, w, with_scale=True)
    tf = Similarity(s, r, t)
    return AlignmentResult(tf, _rmse(tf.apply(src), dst, w), rank_ok)


def umeyama_se3(c, dst=None, w=None) -> AlignmentResult:
    """Weighted least-squares rigid fit (scale fixed to 1)."""
    c = _coerce(c, dst, w)
    src, dst, w = c.active()
    _, r, t, rank_ok = _procrustes(src, dst, w, with_scale=False)
    tf = RigidTransform(r, t)
    return AlignmentResult(tf, _rmse(tf.apply(src), dst, w), rank_ok)


def _sa3_objective(src, dst, w, r, scale, t) -> float:
    res = (src * scale) @ r.T + t - dst
    return float(w @ np.einsum("ij,ij->i", res, res))


def fit_sa3_nocs(
    c,
    dst=None,
    w=None,
    max_iter: int = 100,
    rel_tol: float = 1e-12,
    stall_tol: float = 1e-6,
) -> AlignmentResult:
    """Fit ``dst ~ R diag(s) src + t`` by alternating minimization.

    Each iteration runs a weighted Kabsch step for ``(R, t)`` with the scale
    fixed, then a closed-form per-axis scale step with the rotation fixed
    (translation re-centered in the same step).  Both are exact block
    minimizations, so the objective never increases.

    Initialization for sources spanning 3D: rotation from isotropic Umeyama,
    scale from per-axis standard-deviation ratios in the object frame.  Planar
    sources (always the case for 3 points) start from squared scales solved from
    pairwise distances, then a Kabsch rotation.  A planar source is degenerate
    when its plane contains a canonical axis direction with no spread.
    """
    c = _coerce(c, dst, w)
    src, dst, w = c.active()
    if len(w) < 3:
        raise InsufficientPoints(f"anisotropic fit needs at least 3 positive-weight pairs, got {len(w)}")
    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    xd = dst - mu_d
    cov_s = (xs * w[:, None]).T @ xs
    ev = np.linalg.eigvalsh(cov_s)
    if ev[1] <= RANK_TOL * ev[2]:
        raise DegenerateGeometry("source points are collinear")
    var_axis = np.diag(cov_s)
    if np.any(var_axis <= RANK_TOL * ev[2]):
        raise DegenerateGeometry("no source spread along a canonical axis")

    if ev[0] > RANK_TOL * ev[2]:
        _, r, _, rank_ok = _procrustes(src, dst, w, with_scale=True)
        y = xd @ r
        scale = np.sqrt((w @ (y * y)) / var_axis)
    else:
        scale = _planar_scale_init(src, dst, w)
        _, r, _, rank_ok = _procrustes(src * scale, dst, w, with_scale=False)
    if not np.all(scale > 0):
        raise DegenerateGeometry("zero spread along a target axis")
    t = mu_d - r @ (scale * mu_s)

    total = float(w @ np.einsum("ij,ij->i", xd, xd))
    floor = (4.0 * np.finfo(float).eps) ** 2 * max(total, np.finfo(float).tiny)
    slack = 64.0 * np.finfo(float).eps * max(total, np.finfo(float).tiny)
    f = _sa3_objective(src, dst, w, r, scale, t)
    history = [f]
    rel_drop = np.inf
    for _ in range(max_iter):
        if f <= floor:
            break
        _, r_new, _, rank_new = _procrustes(src * scale, dst, w, with_scale=False)
        y = xd @ r_new
        num = w @ (xs * y)
        if not np.all(num > 0):
            raise DegenerateGeometry("scale step produced a non-positive axis")
        s_new = num / var_axis
        t_new = mu_d - r_new @ (s_new * mu_s)
        f_new = _sa3_objective(src, dst, w, r_new, s_new, t_new)
        assert f_new <= f + slack, "SA(3) objective increased"
        if f_new > f:
            # round-off level; keep the previous iterate
            rel_drop = 0.0
            break
        r, scale, t, rank_ok = r_new, s_new, t_new, rank_new
        history.append(f_new)
        rel_drop = (f - f_new) / f if f > 0 else 0.0
        f = f_new
        if rel_drop < rel_tol:
            break
    else:
        if f > floor and rel_drop > stall_tol:
            raise NoConvergence(f"no convergence after {max_iter} iterations (last relative drop {rel_drop:.3g})")

    tf = AnisoSimilarity(r, scale, t)
    return AlignmentResult(tf, float(np.sqrt(max(f, 0.0))), rank_ok, history)


MAX_PAIR_POINTS = 64


def _planar_scale_init(src, dst, w):
    """Per-axis scales from ``|dst_i - dst_j|^2 = sum_k s_k^2 (src_ik - src_jk)^2``.

    Linear in the squared scales; solved by weighted least squares over all
    pairs of (at most ``MAX_PAIR_POINTS``) points.
    """
    n = len(w)
    pick = np.arange(n) if n <= MAX_PAIR_POINTS else np.linspace(0, n - 1, MAX_PAIR_POINTS).round().astype(int)
    i, j = np.triu_indices(len(pick), 1)
    i, j = pick[i], pick[j]
    a = (src[i] - src[j]) ** 2
    b = np.sum((dst[i] - dst[j]) ** 2, axis=1)
    sw = np.sqrt(w[i] * w[j])
    s2, _, rank, sv = np.linalg.lstsq(a * sw[:, None], b * sw, rcond=None)
    if rank < 3 or sv[-1] <= 1e-9 * sv[0]:
        raise DegenerateGeometry("pairwise distances do not determine the axis scales")
    if not np.all(s2 > 0):
        raise DegenerateGeometry("planar source admits no positive scale")
    return np.sqrt(s2)


@dataclass(frozen=True)
class TwoStepResult:
    relative: RigidTransform
    anchor_calibration: Similarity
    anchor_rmse: float
    query_rmse: float
    calibrated_anchor: Optional[np.ndarray] = None


def _frame_pairs(pm: PointMap, cam: PointMap, name: str):
    if pm.shape != cam.shape:
        raise DimensionMismatch(f"{name} point map {pm.shape} and camera points {cam.shape} differ")
    src, wp = pm.flat()
    dst, wc = cam.flat()
    w = wp * wc
    keep = w > 0
    if keep.sum() < MIN_RELATIVE_PIXELS:
        raise InsufficientPoints(f"{name} frame has {int(keep.sum())} usable pixels, need {MIN_RELATIVE_PIXELS}")
    return WeightedCorrespondences(src[keep], dst[keep], w[keep])


def solve_relative_pose(
    anchor_pm: PointMap, anchor_cam: PointMap, query_pm: PointMap, query_cam: PointMap
) -> TwoStepResult:
    """Two-step relative pose with diagnostics.

    1. Sim(3) from the anchor point map to the anchor's depth-lifted points.
    2. Apply that similarity to the query point map, then fit SE(3) from the
       calibrated query map to the query's depth-lifted points.

    Weights are products of point-map and camera-point confidences.
    """
    anchor = _frame_pairs(anchor_pm, anchor_cam, "anchor")
    query = _frame_pairs(query_pm, query_cam, "query")
    step1 = umeyama_sim3(anchor)
    s_a = step1.transform
    calibrated_query = s_a.apply(query.src)
    step2 = umeyama_se3(WeightedCorrespondences(calibrated_query, query.dst, query.w))
    return TwoStepResult(
        relative=step2.transform,
        anchor_calibration=s_a,
        anchor_rmse=step1.rmse,
        query_rmse=step2.rmse,
        calibrated_anchor=s_a.apply(anchor.src),
    )


def relative_pose_two_step(
    anchor_pm: PointMap, anchor_cam: PointMap, query_pm: PointMap, query_cam: PointMap
) -> RigidTransform:
    """Anchor-to-query rigid transform; see :func:`solve_relative_pose`."""
    return solve_relative_pose(anchor_pm, anchor_cam, query_pm, query_cam).relative


def isotropic_scale_from_size(size) -> float:
    size = np.asarray(size, dtype=np.float64).reshape(-1)
    if size.size == 0 or np.any(size <= 0):
        raise NonPositiveSize("size components must be positive")
    return float(np.mean(np.abs(size)))
