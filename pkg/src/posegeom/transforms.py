"""Rotation representations and the SE(3) / Sim(3) / SA(3) transform algebra.

Rotations are plain ``(3, 3)`` float arrays, quaternions are ``(4,)`` arrays in
``(w, x, y, z)`` order and 6D rotations are ``(6,)`` arrays holding the two
column seeds ``a`` and ``b`` back to back.  Poses are frozen dataclasses so they
can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput

ORTHO_TOL = 1e-9
MIN_6D_ANGLE = 1e-6


def _as_vec3(v, name="vector") -> np.ndarray:
    out = np.asarray(v, dtype=np.float64).reshape(-1)
    if out.shape != (3,):
        raise ValueError(f"{name} must have 3 entries, got shape {np.shape(v)}")
    return out


def _as_points(pts) -> np.ndarray:
    out = np.asarray(pts, dtype=np.float64)
    if out.ndim == 1:
        out = out[None, :]
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"points must be (N, 3), got {np.shape(pts)}")
    return out


def is_rotation(m, tol: float = ORTHO_TOL) -> bool:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return (
        np.linalg.norm(m.T @ m - np.eye(3)) <= tol
        and abs(np.linalg.det(m) - 1.0) <= tol
    )


def check_rotation(m, tol: float = ORTHO_TOL) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if not is_rotation(m, tol):
        raise ValueError("matrix is not a proper rotation")
    return m


def rot_axis_angle(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues formula; ``axis`` need not be normalized."""
    k = _as_vec3(axis, "axis")
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle_rad) * kx + (1.0 - np.cos(angle_rad)) * (kx @ kx)


def rot_z(angle_deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(angle_deg)), np.sin(np.radians(angle_deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# ---------------------------------------------------------------------------
# 6D representation


def rot_from_6d(v) -> np.ndarray:
    """Map two column seeds ``(a, b)`` to a rotation by Gram-Schmidt.

    ``c1 = a/|a|``, ``c2 = normalize(b - (c1.b) c1)``, ``c3 = c1 x c2``.
    Seeds whose angle (or its supplement) is below ``MIN_6D_ANGLE`` are rejected.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (6,):
        raise ValueError("6D rotation must have 6 entries")
    a, b = v[:3], v[3:]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        raise DegenerateInput("6D seed has a zero-length column")
    angle = np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b)
    if min(angle, np.pi - angle) < MIN_6D_ANGLE:
        raise DegenerateInput("6D seed columns are (nearly) parallel")
    c1 = a / na
    c2 = b - (c1 @ b) * c1
    c2 /= np.linalg.norm(c2)
    # second pass keeps c1.c2 at round-off level for near-parallel seeds
    c2 = c2 - (c1 @ c2) * c1
    c2 /= np.linalg.norm(c2)
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=1)


def rot_to_6d(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return np.concatenate([r[:, 0], r[:, 1]])


# ---------------------------------------------------------------------------
# quaternions (w, x, y, z)


def canonical_quat(q) -> np.ndarray:
    """Normalize and fix the sign: ``w >= 0``, ties broken on the first nonzero of x, y, z."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape != (4,):
        raise ValueError("quaternion must have 4 entries")
    n = np.linalg.norm(q)
    if n <= 1e-12:
        raise DegenerateInput("zero quaternion")
    q = q / n
    for c in q:
        if c != 0.0:
            return q if c > 0 else -q
    return q


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(-1) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(r) -> np.ndarray:
    """Shepperd's method: pivot on the largest of w, x, y, z for stability."""
    m = np.asarray(r, dtype=np.float64)
    tr = np.trace(m)
    diag = (tr, m[0, 0], m[1, 1], m[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return canonical_quat(q)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation on SO(3) via a normalized 4D Gaussian quaternion."""
    q = rng.standard_normal(4)
    return quat_to_rot(q / np.linalg.norm(q))


# ---------------------------------------------------------------------------
# rotation distance


def geodesic_angle_deg(a, b) -> float:
    """Geodesic distance between two rotations, in degrees within [0, 180].

    Evaluated as ``atan2(sin, cos)`` of the relative rotation rather than
    ``arccos((tr - 1) / 2)``: both give the same angle but arccos loses about
    half the digits near 0 degrees.
    """
    rel = np.asarray(a, dtype=np.float64).T @ np.asarray(b, dtype=np.float64)
    cos = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    skew = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    sin = 0.5 * np.linalg.norm(skew)
    return float(np.degrees(np.arctan2(sin, cos)))


# ---------------------------------------------------------------------------
# pose types


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: ``x -> r @ x + t``."""

    r: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "r", check_rotation(np.asarray(self.r, dtype=np.float64).reshape(3, 3)))
        object.__setattr__(self, "t", _as_vec3(self.t, "t"))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def apply(self, pts) -> np.ndarray:
        return _as_points(pts) @ self.r.T + self.t

    def inverse(self) -> "RigidTransform":
        return se3_inverse(self)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return se3_compose(self, other)


@dataclass(frozen=True)
class Similarity:
    """Sim(3) element: ``x -> s * r @ x + t`` with ``s > 0``."""

    s: float = 1.0
    r: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("similarity scale must be positive")
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "r", check_rotation(np.asarray(self.r, dtype=np.float64).reshape(3, 3)))
        object.__setattr__(self, "t", _as_vec3(self.t, "t"))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.s * self.r
        m[:3, 3] = self.t
        return m

    def apply(self, pts) -> np.ndarray:
        return self.s * (_as_points(pts) @ self.r.T) + self.t

    def inverse_apply(self, pts) -> np.ndarray:
        return ((_as_points(pts) - self.t) @ self.r) / self.s

    def to_sa3(self) -> "AnisoSimilarity":
        return AnisoSimilarity(self.r, np.full(3, self.s), self.t)


@dataclass(frozen=True)
class AnisoSimilarity:
    """SA(3) map from canonical to camera coordinates: ``x -> r @ diag(scale) @ x + t``.

    Not a group under composition, so only apply and inverse-apply exist.
    """

    r: np.ndarray = field(default_factory=lambda: np.eye(3))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "r", check_rotation(np.asarray(self.r, dtype=np.float64).reshape(3, 3)))
        object.__setattr__(self, "scale", _as_vec3(self.scale, "scale"))
        object.__setattr__(self, "t", _as_vec3(self.t, "t"))
        if not np.all(self.scale > 0):
            raise ValueError("all scale components must be positive")

    @property
    def rigid(self) -> RigidTransform:
        return RigidTransform(self.r, self.t)

    def apply(self, pts) -> np.ndarray:
        return sa3_apply(self, pts)

    def inverse_apply(self, pts) -> np.ndarray:
        return sa3_inverse_apply(self, pts)

    def to_dict(self) -> dict:
        return {"R": self.r.tolist(), "scale": self.scale.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AnisoSimilarity":
        return cls(d["R"], d.get("scale", [1.0, 1.0, 1.0]), d["t"])


def sa3_apply(p: AnisoSimilarity, pts) -> np.ndarray:
    return (_as_points(pts) * p.scale) @ p.r.T + p.t


def sa3_inverse_apply(p: AnisoSimilarity, pts) -> np.ndarray:
    return ((_as_points(pts) - p.t) @ p.r) / p.scale


def se3_compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a o b``: apply ``b`` first, then ``a``."""
    return RigidTransform(a.r @ b.r, a.r @ b.t + a.t)


def se3_inverse(a: RigidTransform) -> RigidTransform:
    return RigidTransform(a.r.T, -(a.r.T @ a.t))


def rigid_to_dict(a: RigidTransform) -> dict:
    return {"R": a.r.tolist(), "t": a.t.tolist()}


def rigid_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(d["R"], d["t"])
