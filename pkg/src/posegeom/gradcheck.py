"""Seeded, tie-free test points for every analytic loss gradient.

Each entry of ``CASES`` maps a loss name to a builder ``(rng, cfg) -> (fn, x0)`` where
``fn`` takes a flat vector and returns a :class:`~posegeom.losses.LossValue`.
Builders resample until the point is at least ``MARGIN`` away from every kink
(nearest-neighbour ties, hinge corners, L1 zeros, Huber/smooth-L1 switches).
"""

from __future__ import annotations

import numpy as np

from . import losses
from .camera import CameraPoseEncoding, camera_loss

MARGIN = 1e-3
CFG = losses.LossConfig()


def _retry(rng, draw, ok, attempts=1000):
    for _ in range(attempts):
        sample = draw(rng)
        if ok(sample):
            return sample
    raise RuntimeError("could not draw a tie-free sample")


def _nn_margin(a, b):
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    part = np.sort(d, axis=1)
    return (part[:, 1] - part[:, 0]).min(), part[:, 0].min()


def _chamfer(squared):
    def build(rng, cfg=CFG):
        a, b = _retry(
            rng,
            lambda r: (r.normal(size=(6, 3)), r.normal(size=(8, 3))),
            lambda s: min(_nn_margin(*s)) > MARGIN,
        )
        return (lambda x: losses.chamfer_one_sided(x.reshape(6, 3), b, squared=squared)), a.ravel()

    return build


def _diversity(rng, cfg=CFG):
    # wider than the default hinge so random points land on both sides of it
    tau2 = 0.3

    def ok(x):
        d = np.linalg.norm(x[:, None] - x[None], axis=2)[np.triu_indices(len(x), 1)]
        return d.min() > MARGIN and np.abs(d - tau2).min() > MARGIN

    x = _retry(rng, lambda r: r.uniform(-0.3, 0.3, (8, 3)), ok)
    return (lambda v: losses.diversity_loss(v.reshape(8, 3), tau2)), x.ravel()


def _pose(rng, cfg=CFG):
    gt = (np.linalg.qr(rng.normal(size=(3, 3)))[0], rng.normal(size=3), rng.uniform(0.1, 1, 3))
    x0 = np.concatenate([gt[0].ravel(), gt[1], gt[2]]) + rng.normal(0, 0.1, 15)

    def fn(v):
        return losses.pose_loss((v[:9].reshape(3, 3), v[9:12], v[12:]), gt)

    return fn, x0


def _smooth_l1(rng, cfg=CFG):
    beta = cfg.sl1_beta
    gt = rng.uniform(-0.5, 0.5, (5, 3))
    res = _retry(rng, lambda r: r.normal(0, 0.15, (5, 3)), lambda d: np.abs(np.abs(d) - beta).min() > MARGIN)
    return (lambda v: losses.nocs_smooth_l1(v.reshape(5, 3), gt, beta)), (gt + res).ravel()


def _info_nce(rng, cfg=CFG):
    n, d = 6, 4
    z = rng.normal(size=(n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    mask = rng.uniform(size=(n, n)) < 0.4
    np.fill_diagonal(mask, False)
    mask[0, 1] = True
    w = rng.uniform(0.2, 2.0, (n, n))

    def fn(v):
        return losses.info_nce(v.reshape(n, d), mask, w, cfg.tau_infonce, cfg.eps, norm_tol=None)

    return fn, z.ravel()


def _aleatoric(rng, cfg=CFG):
    h, w, c = 5, 6, 3
    gt = rng.normal(size=(h, w, c))
    sigma = rng.uniform(0.5, 2.0, (h, w))
    mask = rng.uniform(size=(h, w)) < 0.8

    def ok(res):
        dv = res[1:] - res[:-1]
        du = res[:, 1:] - res[:, :-1]
        return min(np.abs(res).min(), np.abs(dv).min(), np.abs(du).min()) > MARGIN

    res = _retry(rng, lambda r: r.normal(size=(h, w, c)), ok)

    def fn(v):
        return losses.aleatoric_map_loss(v.reshape(h, w, c), gt, sigma, cfg.alpha, mask)

    return fn, (gt + res).ravel()


def _scale(rng, cfg=CFG):
    gt_t, gt_s, gt_scale = rng.normal(size=3), rng.uniform(0.1, 1, 3), rng.uniform(0.5, 2)
    gt = np.concatenate([gt_t, gt_s, [np.log(gt_scale)]])
    res = _retry(rng, lambda r: r.normal(0, 0.2, 7), lambda d: np.abs(d).min() > MARGIN)

    def fn(v):
        return losses.scale_loss(v[:3], gt_t, v[3:6], gt_s, v[6], gt_scale)

    return fn, gt + res


def _camera(rng, cfg=CFG):
    delta = cfg.huber_delta
    q = rng.normal(size=4)
    gt = CameraPoseEncoding(q / np.linalg.norm(q), rng.normal(size=3), *rng.uniform(0.5, 2.0, 2))
    g = gt.as_vector()
    res = _retry(
        rng,
        lambda r: r.normal(0, 0.15, 9),
        lambda d: np.abs(np.abs(d) - delta).min() > MARGIN and (g[:4] @ (g[:4] + d[:4])) > 0.1,
    )

    def fn(v):
        return camera_loss(CameraPoseEncoding.from_vector(v), gt, delta)

    return fn, g + res


CASES = {
    "chamfer_squared": _chamfer(True),
    "chamfer_reconstruction": _chamfer(False),
    "diversity": _diversity,
    "pose": _pose,
    "nocs_smooth_l1": _smooth_l1,
    "info_nce": _info_nce,
    "aleatoric": _aleatoric,
    "scale": _scale,
    "camera": _camera,
}


def run_suite(
    points_per_loss: int = 20, eps: float = 1e-6, tol: float = 1e-4, seed: int = 0, config: losses.LossConfig = CFG
) -> dict:
    """Max relative gradient error per loss across seeded points."""
    out = {}
    for i, (name, build) in enumerate(CASES.items()):
        rng = np.random.default_rng([seed, i])
        worst = 0.0
        for _ in range(points_per_loss):
            fn, x0 = build(rng, config)
            worst = max(worst, losses.finite_diff_check(fn, x0, eps=eps, tol=tol).max_rel_error)
        out[name] = {"max_rel_error": worst, "tol": tol, "passed": bool(worst < tol), "points": points_per_loss}
    return out
