"""Pinhole camera: FoV encoding, depth lifting, projection and camera supervision."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DimensionMismatch
from .losses import LossValue, huber
from .transforms import rot_to_quat

MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class CameraPoseEncoding:
    """Quaternion extrinsics plus field-of-view intrinsics (radians)."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fov_x: float = np.pi / 2
    fov_y: float = np.pi / 2

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64).reshape(4))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        for fov in (self.fov_x, self.fov_y):
            if not 0.0 < fov < np.pi:
                raise ValueError("field of view must lie in (0, pi)")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.t, [self.fov_x, self.fov_y]])

    @classmethod
    def from_vector(cls, g) -> "CameraPoseEncoding":
        g = np.asarray(g, dtype=np.float64)
        return cls(g[:4], g[4:7], float(g[7]), float(g[8]))


@dataclass(frozen=True)
class PointMap:
    """Per-pixel 3D points (H, W, 3) with a non-negative confidence (H, W)."""

    values: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        c = np.asarray(self.confidence, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3 or c.shape != v.shape[:2]:
            raise DimensionMismatch("point map must be (H, W, 3) with (H, W) confidence")
        if np.any(c < 0):
            raise ValueError("confidence must be non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "confidence", c)

    @property
    def shape(self):
        return self.confidence.shape

    def scaled(self, factor: float) -> "PointMap":
        return PointMap(self.values * factor, self.confidence)

    def flat(self):
        return self.values.reshape(-1, 3), self.confidence.reshape(-1)


def fov_to_intrinsics(enc: CameraPoseEncoding, width: int, height: int) -> Intrinsics:
    """Decode FoV to focal lengths; principal point at the image center."""
    fx = (width / 2.0) / np.tan(enc.fov_x / 2.0)
    fy = (height / 2.0) / np.tan(enc.fov_y / 2.0)
    return Intrinsics(fx, fy, width / 2.0, height / 2.0, width, height)


def intrinsics_to_fov(k: Intrinsics) -> tuple[float, float]:
    return (
        float(2.0 * np.arctan((k.width / 2.0) / k.fx)),
        float(2.0 * np.arctan((k.height / 2.0) / k.fy)),
    )


def pixel_grid(height: int, width: int):
    """Pixel center coordinates ``(u, v)``; centers sit on integer positions."""
    v, u = np.mgrid[0:height, 0:width]
    return u.astype(np.float64), v.astype(np.float64)


def backproject(depth, k: Intrinsics) -> PointMap:
    """Lift a depth map to camera-space points; non-positive depth is invalid."""
    d = np.asarray(depth, dtype=np.float64)
    if d.shape != (k.height, k.width):
        raise DimensionMismatch(f"depth {d.shape} does not match intrinsics {(k.height, k.width)}")
    valid = d > 0
    z = np.where(valid, d, 0.0)
    u, v = pixel_grid(k.height, k.width)
    pts = np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], axis=-1)
    return PointMap(pts, valid.astype(np.float64))


def backproject_pixels(u, v, z, k: Intrinsics) -> np.ndarray:
    u, v, z = (np.asarray(a, dtype=np.float64) for a in (u, v, z))
    return np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], axis=-1)


def project(pts, k: Intrinsics) -> np.ndarray:
    """Pinhole projection to ``(u, v)``. Results may fall outside the image."""
    p = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if np.any(p[:, 2] <= MIN_DEPTH):
        raise BehindCamera("point at or behind the camera plane")
    return np.stack([k.fx * p[:, 0] / p[:, 2] + k.cx, k.fy * p[:, 1] / p[:, 2] + k.cy], axis=1)


def camera_loss(pred: CameraPoseEncoding, gt: CameraPoseEncoding, delta: float = 0.1) -> LossValue:
    """Summed component-wise Huber over (quaternion, translation, fov).

    The predicted quaternion is sign-aligned to the ground truth first, so
    ``q`` and ``-q`` cost the same.  Gradient is w.r.t. ``pred.as_vector()``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    gp = pred.as_vector()
    gg = gt.as_vector()
    sign = np.ones(9)
    if gp[:4] @ gg[:4] < 0:
        sign[:4] = -1.0
    value, dres = huber(sign * gp - gg, delta)
    return LossValue(float(np.sum(value)), dres * sign)


def camera_encoding_from_pose(r, t, k: Intrinsics) -> CameraPoseEncoding:
    fx, fy = intrinsics_to_fov(k)
    return CameraPoseEncoding(rot_to_quat(r), t, fx, fy)
