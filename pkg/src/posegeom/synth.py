"""Deterministic synthetic scenes acting as the ground-truth oracle.

Random streams are derived from ``SeedSequence([seed, stream_id])`` with one
stream per sub-task (see ``STREAMS``), so changing e.g. the noise model never
perturbs the sampled poses.  Scenes are meant to be serialized and reloaded
rather than regenerated when comparing implementations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .camera import CameraPoseEncoding, Intrinsics, PointMap, backproject, fov_to_intrinsics
from .errors import NothingVisible
from .transforms import (
    AnisoSimilarity,
    RigidTransform,
    geodesic_angle_deg,
    random_rotation,
    rot_axis_angle,
    se3_inverse,
)

log = logging.getLogger(__name__)

STREAMS = {"object": 0, "pose": 1, "noise": 2, "outliers": 3, "camera": 4, "sampler": 5}
KINDS = ("box", "cylinder", "sphere", "composite")
NEAR_PLANE = 0.1
SCENE_TOL = 1e-6


def rng_for(seed: int, stream: str, *extra: int) -> np.random.Generator:
    key = [int(seed), STREAMS[stream], *(int(e) for e in extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


# ---------------------------------------------------------------------------
# canonical objects


def _box_surface(rng, n, lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    size = hi - lo
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]])
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    side = rng.integers(0, 2, size=n)
    pts = lo + rng.uniform(0.0, 1.0, (n, 3)) * size
    rows = np.arange(n)
    pts[rows, axis] = np.where(side == 1, hi[axis], lo[axis])
    return pts


def _cylinder_surface(rng, n, radius, z0, z1, cx=0.0):
    side = 2 * np.pi * radius * (z1 - z0)
    cap = np.pi * radius**2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0.0, 2 * np.pi, n)
    # caps: uniform on the disk via sqrt radius
    rad = np.where(part == 0, radius, radius * np.sqrt(rng.uniform(0.0, 1.0, n)))
    z = np.where(part == 0, rng.uniform(z0, z1, n), np.where(part == 1, z1, z0))
    return np.stack([cx + rad * np.cos(theta), rad * np.sin(theta), z], axis=1)


def gen_canonical_object(kind: str, n: int, seed: int, mode: str = "surface") -> np.ndarray:
    """Surface samples of a canonical shape inside the NOCS cube ``[-0.5, 0.5]^3``.

    ``mode="corners"`` (box only) returns the 8 cube corners.
    """
    if n < 8:
        raise ValueError("need at least 8 points")
    if kind not in KINDS:
        raise ValueError(f"unknown object kind {kind!r}; expected one of {KINDS}")
    if mode == "corners":
        if kind != "box":
            raise ValueError("corner mode is only defined for boxes")
        return np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    rng = rng_for(seed, "object")
    if kind == "box":
        pts = _box_surface(rng, n, [-0.5] * 3, [0.5] * 3)
    elif kind == "sphere":
        d = rng.standard_normal((n, 3))
        pts = 0.5 * d / np.linalg.norm(d, axis=1, keepdims=True)
    elif kind == "cylinder":
        pts = _cylinder_surface(rng, n, 0.5, -0.5, 0.5)
    else:
        # mug-like: cylindrical body plus a box handle
        n_body = int(round(0.75 * n))
        body = _cylinder_surface(rng, n_body, 0.3, -0.5, 0.5, cx=-0.15)
        handle = _box_surface(rng, n - n_body, [0.15, -0.05, -0.25], [0.45, 0.05, 0.25])
        pts = np.concatenate([body, handle])
    return np.clip(pts, -0.5, 0.5)


# ---------------------------------------------------------------------------
# poses


DEFAULT_TRANS_RANGE = ((-0.05, 0.05), (-0.05, 0.05), (0.6, 1.0))
DEFAULT_SCALE_RANGE = (0.08, 0.25)


def sample_pose(seed_or_rng, trans_range=DEFAULT_TRANS_RANGE, scale_range=DEFAULT_SCALE_RANGE) -> AnisoSimilarity:
    """Uniform rotation, per-axis uniform translation and scale."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else rng_for(seed_or_rng, "pose")
    tr = np.asarray(trans_range, dtype=np.float64)
    if tr[2, 0] <= NEAR_PLANE:
        raise ValueError(f"depth range must stay beyond the near plane ({NEAR_PLANE} m)")
    lo, hi = scale_range
    if not 0 < lo <= hi:
        raise ValueError("scale range must be positive")
    r = random_rotation(rng)
    t = rng.uniform(tr[:, 0], tr[:, 1])
    s = rng.uniform(lo, hi, 3)
    return AnisoSimilarity(r, s, t)


# ---------------------------------------------------------------------------
# rendering


def render_depth(pts_cam, k: Intrinsics):
    """Z-buffer point splatting to the nearest pixel center.

    Returns ``(depth, index)``: the minimum Z per covered pixel (0 elsewhere)
    and the index of the winning point (-1 elsewhere).  Z ties go to the
    lowest point index.
    """
    p = np.asarray(pts_cam, dtype=np.float64).reshape(-1, 3)
    front = p[:, 2] > 1e-9
    if not front.any():
        raise NothingVisible("no point in front of the camera")
    idx = np.flatnonzero(front)
    z = p[idx, 2]
    u = np.rint(k.fx * p[idx, 0] / z + k.cx).astype(np.int64)
    v = np.rint(k.fy * p[idx, 1] / z + k.cy).astype(np.int64)
    inside = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    if not inside.any():
        raise NothingVisible("no point projects into the image")
    idx, z, u, v = idx[inside], z[inside], u[inside], v[inside]
    pix = v * k.width + u
    order = np.lexsort((idx, z, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    depth = np.zeros(k.height * k.width)
    index = np.full(k.height * k.width, -1, dtype=np.int64)
    depth[pix[win]] = z[win]
    index[pix[win]] = idx[win]
    return depth.reshape(k.height, k.width), index.reshape(k.height, k.width)


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "box"
    n_points: int = 4000
    frames: int = 2
    width: int = 128
    height: int = 128
    fov_deg: float = 60.0
    trans_range: tuple = DEFAULT_TRANS_RANGE
    scale_range: tuple = DEFAULT_SCALE_RANGE
    max_view_angle_deg: float = 30.0
    camera_motion: str = "random"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "n_points": self.n_points, "frames": self.frames,
            "width": self.width, "height": self.height, "fov_deg": self.fov_deg,
            "trans_range": [list(r) for r in self.trans_range],
            "scale_range": list(self.scale_range),
            "max_view_angle_deg": self.max_view_angle_deg,
            "camera_motion": self.camera_motion,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "trans_range" in d:
            d["trans_range"] = tuple(tuple(r) for r in d["trans_range"])
        if "scale_range" in d:
            d["scale_range"] = tuple(d["scale_range"])
        return cls(**d)


@dataclass(frozen=True)
class CorruptionSpec:
    noise_sigma: float = 0.0
    outlier_frac: float = 0.0
    outlier_scale: float = 0.5
    confidence_model: str = "oracle"
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0 or self.outlier_scale < 0:
            raise ValueError("noise_sigma and outlier_scale must be non-negative")
        if not 0.0 <= self.outlier_frac < 1.0:
            raise ValueError("outlier_frac must lie in [0, 1)")
        if self.confidence_model not in ("oracle", "uniform"):
            raise ValueError("confidence_model must be 'oracle' or 'uniform'")

    def to_dict(self) -> dict:
        return {
            "noise_sigma": self.noise_sigma, "outlier_frac": self.outlier_frac,
            "outlier_scale": self.outlier_scale, "confidence_model": self.confidence_model,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SyntheticScene:
    canonical_pts: np.ndarray
    gt_pose: list
    intrinsics: list
    depth: list
    nocs_map: list
    point_map: list
    gt_relative: list
    seed: int
    spec: SceneSpec = field(default_factory=SceneSpec)
    corruption: Optional[CorruptionSpec] = None
    outlier_masks: Optional[list] = None

    @property
    def n_frames(self) -> int:
        return len(self.depth)

    def camera_points(self, i: int) -> PointMap:
        return backproject(self.depth[i], self.intrinsics[i])

    def valid_mask(self, i: int) -> np.ndarray:
        return self.depth[i] > 0

    def nocs_correspondences(self, i: int):
        """Canonical coordinates and depth-lifted camera points at valid pixels (row-major order)."""
        m = self.valid_mask(i)
        return self.nocs_map[i][m], self.camera_points(i).values[m]


def _frame_poses(spec: SceneSpec, seed: int):
    rng = rng_for(seed, "pose")
    p0 = sample_pose(rng, spec.trans_range, spec.scale_range)
    poses = [p0]
    rels = []
    cam_rng = rng_for(seed, "camera")
    for _ in range(1, spec.frames):
        if spec.camera_motion == "static":
            poses.append(p0)
            rels.append(RigidTransform())
            continue
        axis = cam_rng.standard_normal(3)
        angle = np.radians(cam_rng.uniform(0.0, spec.max_view_angle_deg))
        r_delta = rot_axis_angle(axis, angle)
        tr = np.asarray(spec.trans_range, dtype=np.float64)
        t_i = cam_rng.uniform(tr[:, 0], tr[:, 1])
        r_i = r_delta @ p0.r
        poses.append(AnisoSimilarity(r_i, p0.scale, t_i))
        # anchor camera -> frame camera, rigid because the object scale is shared
        rels.append(RigidTransform(r_delta, t_i - r_delta @ p0.t))
    return poses, rels


def make_scene(spec: SceneSpec = SceneSpec(), seed: int = 0, check: bool = True) -> SyntheticScene:
    """Render a multi-frame scene; frame 0 is the anchor.

    Depth stores the winning point's Z.  NOCS labels are the canonical
    coordinates of the pixel-center ray point at that depth, so every valid
    pixel satisfies ``backproject(depth) == gt_pose(nocs)`` up to round-off.
    """
    if spec.frames < 1:
        raise ValueError("a scene needs at least one frame")
    canonical = gen_canonical_object(spec.kind, spec.n_points, seed)
    k = fov_to_intrinsics(
        CameraPoseEncoding(fov_x=np.radians(spec.fov_deg), fov_y=np.radians(spec.fov_deg)),
        spec.width,
        spec.height,
    )
    poses, rels = _frame_poses(spec, seed)
    depth, nocs, pms = [], [], []
    for i, pose in enumerate(poses):
        d, _ = render_depth(pose.apply(canonical), k)
        cam = backproject(d, k)
        valid = d > 0
        nm = np.zeros_like(cam.values)
        nm[valid] = pose.inverse_apply(cam.values[valid])
        to_anchor = se3_inverse(rels[i - 1]) if i > 0 else RigidTransform()
        pm = np.zeros_like(cam.values)
        pm[valid] = to_anchor.apply(cam.values[valid])
        depth.append(d)
        nocs.append(nm)
        pms.append(PointMap(pm, valid.astype(np.float64)))
    scene = SyntheticScene(canonical, poses, [k] * spec.frames, depth, nocs, pms, rels, int(seed), spec)
    if check:
        check_scene(scene)
    return scene


def check_scene(scene: SyntheticScene, tol: float = SCENE_TOL) -> None:
    """Raise ``AssertionError`` unless depth, NOCS, poses and point maps agree pixel-wise."""
    assert np.all((scene.canonical_pts >= -0.5) & (scene.canonical_pts <= 0.5)), "canonical points leave the cube"
    p0 = scene.gt_pose[0]
    for i in range(scene.n_frames):
        m = scene.valid_mask(i)
        if not m.any():
            raise NothingVisible(f"frame {i} has no valid pixels")
        cam = scene.camera_points(i).values[m]
        err = np.abs(scene.gt_pose[i].apply(scene.nocs_map[i][m]) - cam).max()
        assert err <= tol, f"frame {i}: depth/NOCS mismatch {err:.3g}"
        rel = scene.gt_relative[i - 1] if i > 0 else RigidTransform()
        err = np.abs(rel.apply(scene.point_map[i].values[m]) - cam).max()
        assert err <= tol, f"frame {i}: point map mismatch {err:.3g}"
        if i > 0:
            pi = scene.gt_pose[i]
            assert geodesic_angle_deg(rel.r @ p0.r, pi.r) <= 1e-6, "relative rotation inconsistent"
            assert np.abs(rel.r @ p0.t + rel.t - pi.t).max() <= tol, "relative translation inconsistent"


def _ball(rng, n, radius):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0))[:, None]


def corrupt(scene: SyntheticScene, spec: CorruptionSpec) -> SyntheticScene:
    """Prediction-style copy of ``scene`` with noise, outliers and confidences.

    Gaussian noise (``noise_sigma``) is added to valid depth values and to every
    point-map coordinate.  ``outlier_frac`` of the valid point-map pixels per
    frame are displaced uniformly within a ball of ``outlier_scale``.  With the
    ``oracle`` confidence model outliers get confidence 0 and all other valid
    pixels ``1 / (1 + noise_sigma)``; ``uniform`` gives every valid pixel 1.
    Streams are keyed on both ``spec.seed`` and the scene seed.
    """
    noise_rng = rng_for(spec.seed, "noise", scene.seed)
    out_rng = rng_for(spec.seed, "outliers", scene.seed)
    depth, pms, masks = [], [], []
    for i in range(scene.n_frames):
        valid = scene.depth[i] > 0
        nv = int(valid.sum())
        d = scene.depth[i].copy()
        pm = scene.point_map[i].values.copy()
        if spec.noise_sigma > 0:
            d[valid] += noise_rng.normal(0.0, spec.noise_sigma, nv)
            pm[valid] += noise_rng.normal(0.0, spec.noise_sigma, (nv, 3))
        outlier = np.zeros_like(valid)
        n_out = int(round(spec.outlier_frac * nv))
        if n_out:
            chosen = out_rng.choice(np.flatnonzero(valid.ravel()), size=n_out, replace=False)
            outlier.ravel()[chosen] = True
            pm[outlier] += _ball(out_rng, n_out, spec.outlier_scale)
        if spec.confidence_model == "oracle":
            conf = np.where(valid & ~outlier, 1.0 / (1.0 + spec.noise_sigma), 0.0)
        else:
            conf = valid.astype(np.float64)
        depth.append(d)
        pms.append(PointMap(pm, conf))
        masks.append(outlier)
    return replace(scene, depth=depth, point_map=pms, corruption=spec, outlier_masks=masks)


def scale_point_maps(scene: SyntheticScene, factor: float) -> SyntheticScene:
    """Globally rescale every predicted point map (the monocular scale ambiguity)."""
    return replace(scene, point_map=[pm.scaled(factor) for pm in scene.point_map])
