"""Pose evaluation: threshold accuracy, oriented-box IoU, ADD(-S), MSSD, MSPD, AUC and VUS.

Thresholds are inclusive everywhere.  Comparisons carry a ``TIE_TOL`` relative
slack so an error sitting exactly on a threshold (up to round-off in the angle
recovery) counts as a success.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .camera import Intrinsics, project
from .errors import EmptyInput, LengthMismatch
from .transforms import AnisoSimilarity, RigidTransform, geodesic_angle_deg

TIE_TOL = 1e-9
DEFAULT_PAIRS = ((5, 2), (5, 5), (10, 2), (10, 5))


def leq(err, thr):
    """Inclusive ``err <= thr`` with round-off slack; vectorized."""
    return np.asarray(err) <= thr + TIE_TOL * max(1.0, abs(thr))


def geq(val, thr):
    return np.asarray(val) >= thr - TIE_TOL * max(1.0, abs(thr))


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class OrientedBox3:
    pose: RigidTransform
    extents: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.extents, dtype=np.float64).reshape(3)
        if np.any(e <= 0):
            raise ValueError("box extents must be positive")
        object.__setattr__(self, "extents", e)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def corners(self) -> np.ndarray:
        signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
        return self.pose.apply(signs * self.extents / 2.0)

    def halfspaces(self):
        """Six ``(normal, offset)`` pairs; inside means ``normal . x <= offset``."""
        half = self.extents / 2.0
        c = self.pose.t
        out = []
        for j in range(3):
            axis = self.pose.r[:, j]
            for sgn in (1.0, -1.0):
                n = sgn * axis
                out.append((n, float(n @ c + half[j])))
        return out

    def faces(self):
        """Six ``(polygon, outward_normal)`` faces with vertices in cyclic order."""
        h = self.extents / 2.0
        faces = []
        for j in range(3):
            a, b = (j + 1) % 3, (j + 2) % 3
            for sgn in (1.0, -1.0):
                quad = np.zeros((4, 3))
                quad[:, j] = sgn * h[j]
                quad[:, a] = [-h[a], h[a], h[a], -h[a]]
                quad[:, b] = [-h[b], -h[b], h[b], h[b]]
                faces.append((self.pose.apply(quad), sgn * self.pose.r[:, j]))
        return faces

    def scaled(self, factor: float) -> "OrientedBox3":
        return OrientedBox3(self.pose, self.extents * factor)


def box_from_pose(pose: AnisoSimilarity, model_pts) -> OrientedBox3:
    """Tight box of the canonical model under an SA(3) pose."""
    pts = np.asarray(model_pts, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = pose.apply((lo + hi) / 2.0)[0]
    return OrientedBox3(RigidTransform(pose.r, center), (hi - lo) * pose.scale)


@dataclass(frozen=True)
class ModelPoints:
    pts: np.ndarray
    diameter: float = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.pts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
            raise ValueError("model needs at least 4 points of shape (P, 3)")
        object.__setattr__(self, "pts", pts)
        object.__setattr__(self, "diameter", _diameter(pts))


def _diameter(pts) -> float:
    # only hull vertices can realize the maximum distance
    try:
        cand = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        cand = pts
    d = cand[:, None, :] - cand[None, :, :]
    return float(np.sqrt(np.einsum("ijk,ijk->ij", d, d).max()))


@dataclass
class MetricReport:
    records: list
    aggregates: dict

    def to_dict(self) -> dict:
        return {"records": self.records, "aggregates": self.aggregates}


# ---------------------------------------------------------------------------
# thresholded accuracy


def pose_errors(pred_r, pred_t, gt_r, gt_t):
    """Rotation error in degrees and translation error in meters."""
    return geodesic_angle_deg(pred_r, gt_r), float(np.linalg.norm(np.asarray(pred_t) - np.asarray(gt_t)))


def threshold_accuracy(preds: Sequence, gts: Sequence, deg: float, cm: float) -> float:
    """Fraction of ``(R, t)`` pairs within ``deg`` degrees and ``cm`` centimeters."""
    if len(preds) != len(gts):
        raise LengthMismatch("prediction and ground-truth lists differ in length")
    if len(preds) == 0:
        raise EmptyInput("no poses to evaluate")
    hits = 0
    for (pr, pt), (gr, gt_) in zip(preds, gts):
        re, te = pose_errors(pr, pt, gr, gt_)
        hits += bool(leq(re, deg) and leq(te, cm / 100.0))
    return hits / len(preds)


# ---------------------------------------------------------------------------
# oriented box IoU by polytope clipping


def _clip_polygon(poly, n, d, tol):
    """Sutherland-Hodgman clip of a planar polygon to ``n . x <= d``.

    Returns the clipped polygon and the vertices that lie on the clip plane.
    """
    out, on_plane = [], []
    dist = poly @ n - d
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        dp, dq = dist[i], dist[(i + 1) % k]
        if dp <= tol:
            out.append(p)
            if dp >= -tol:
                on_plane.append(p)
        if (dp < -tol and dq > tol) or (dp > tol and dq < -tol):
            x = p + (q - p) * (dp / (dp - dq))
            out.append(x)
            on_plane.append(x)
    return (np.array(out) if len(out) >= 3 else None), on_plane


def _order_on_plane(pts, n):
    c = pts.mean(axis=0)
    e1 = np.cross(n, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 0.5:
        e1 = np.cross(n, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    rel = pts - c
    ang = np.arctan2(rel @ e2, rel @ e1)
    return pts[np.argsort(ang, kind="stable")]


def _polygon_area(poly) -> float:
    v0 = poly[0]
    cross = np.cross(poly[1:-1] - v0, poly[2:] - v0)
    return 0.5 * float(np.linalg.norm(cross.sum(axis=0)))


def clip_polytope(faces, halfspaces, tol):
    """Clip a convex polytope (list of ``(polygon, outward normal)``) by half-spaces."""
    for n, d in halfspaces:
        new_faces, cap = [], []
        has_face_on_plane = False
        for poly, fn in faces:
            clipped, on_plane = _clip_polygon(poly, n, d, tol)
            cap.extend(on_plane)
            if len(on_plane) == len(poly) and fn @ n > 0:
                has_face_on_plane = True
            if clipped is not None:
                new_faces.append((clipped, fn))
        if not new_faces:
            return []
        # an existing face already lies on the plane: the cap would duplicate it
        if len(cap) >= 3 and not has_face_on_plane:
            new_faces.append((_order_on_plane(np.array(cap), n), n))
        faces = new_faces
    return faces


def polytope_volume(faces) -> float:
    """Divergence theorem: ``V = 1/3 sum_f area_f (n_f . p_f)`` for outward normals."""
    if not faces:
        return 0.0
    ref = np.mean([poly.mean(axis=0) for poly, _ in faces], axis=0)
    vol = 0.0
    for poly, n in faces:
        vol += _polygon_area(poly) * float(n @ (poly[0] - ref))
    return max(vol / 3.0, 0.0)


def box_intersection_volume(a: OrientedBox3, b: OrientedBox3) -> float:
    scale = max(a.extents.max(), b.extents.max(), 1e-300)
    tol = 1e-12 * (scale + np.abs(a.pose.t).max() + np.abs(b.pose.t).max())
    return polytope_volume(clip_polytope(a.faces(), b.halfspaces(), tol))


def box_iou3d(a: OrientedBox3, b: OrientedBox3) -> float:
    inter = box_intersection_volume(a, b)
    union = a.volume + b.volume - inter
    return float(np.clip(inter / union, 0.0, 1.0)) if union > 0 else 0.0


def normalized_box_iou3d(pred: OrientedBox3, gt: OrientedBox3) -> float:
    """IoU after rescaling ``pred`` so its mean extent equals the ground truth's."""
    return box_iou3d(pred.scaled(gt.extents.mean() / pred.extents.mean()), gt)


# ---------------------------------------------------------------------------
# surface distances


def _model_array(model) -> np.ndarray:
    return model.pts if isinstance(model, ModelPoints) else np.asarray(model, dtype=np.float64)


def add_metric(pred: AnisoSimilarity, gt: AnisoSimilarity, model) -> float:
    pts = _model_array(model)
    return float(np.linalg.norm(pred.apply(pts) - gt.apply(pts), axis=1).mean())


def adds_metric(pred: AnisoSimilarity, gt: AnisoSimilarity, model) -> float:
    """Mean over predicted points of the nearest-neighbor distance to the ground-truth points."""
    pts = _model_array(model)
    dist, _ = cKDTree(gt.apply(pts)).query(pred.apply(pts), k=1)
    return float(dist.mean())


def _symmetries(sym) -> list:
    return [RigidTransform()] if not sym else list(sym)


def mssd(pred: AnisoSimilarity, gt: AnisoSimilarity, model, sym=None) -> float:
    """Min over symmetries of the max per-point 3D distance."""
    pts = _model_array(model)
    p = pred.apply(pts)
    return float(min(np.linalg.norm(p - gt.apply(s.apply(pts)), axis=1).max() for s in _symmetries(sym)))


def mspd(pred: AnisoSimilarity, gt: AnisoSimilarity, model, sym, k: Intrinsics) -> float:
    """Min over symmetries of the max per-point projected distance, in pixels."""
    pts = _model_array(model)
    p = project(pred.apply(pts), k)
    return float(min(np.linalg.norm(p - project(gt.apply(s.apply(pts)), k), axis=1).max() for s in _symmetries(sym)))


# ---------------------------------------------------------------------------
# curve summaries


def threshold_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive uniform grid; rounded so 0.05 steps land on exact decimals."""
    n = int(round((stop - start) / step)) + 1
    return np.round(np.linspace(start, stop, n), 12)


def auc(values, start: float = 0.25, stop: float = 0.95, step: float = 0.05) -> float:
    """Mean over the threshold grid of the fraction of values >= threshold."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyInput("auc needs at least one value")
    return float(np.mean([geq(v, thr).mean() for thr in threshold_grid(start, stop, step)]))


def vus(
    rot_errs,
    trans_errs,
    rot_range=(1.0, 15.0),
    trans_range=(1.0, 5.0),
    rot_steps: int = 15,
    trans_steps: int = 5,
) -> float:
    """Mean joint accuracy over a (degrees x centimeters) threshold grid; errors in degrees / meters."""
    r = np.asarray(rot_errs, dtype=np.float64).reshape(-1)
    t = np.asarray(trans_errs, dtype=np.float64).reshape(-1)
    if r.shape != t.shape:
        raise LengthMismatch("rotation and translation error lists differ in length")
    if r.size == 0:
        raise EmptyInput("vus needs at least one pose")
    degs = np.linspace(rot_range[0], rot_range[1], rot_steps)
    cms = np.linspace(trans_range[0], trans_range[1], trans_steps)
    acc = [(leq(r, d) & leq(t, c / 100.0)).mean() for d in degs for c in cms]
    return float(np.mean(acc))


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class EvalInstance:
    instance_id: str
    pred: AnisoSimilarity
    gt: AnisoSimilarity
    model: Optional[ModelPoints] = None
    symmetries: Optional[list] = None
    intrinsics: Optional[Intrinsics] = None
    category: Optional[str] = None


def evaluate_instance(inst: EvalInstance) -> dict:
    rec = {"instance_id": inst.instance_id, "category": inst.category}
    rec["rot_err_deg"], rec["trans_err_m"] = pose_errors(inst.pred.r, inst.pred.t, inst.gt.r, inst.gt.t)
    if inst.model is not None:
        pts = inst.model.pts
        bp, bg = box_from_pose(inst.pred, pts), box_from_pose(inst.gt, pts)
        rec["iou"] = box_iou3d(bp, bg)
        rec["niou"] = normalized_box_iou3d(bp, bg)
        rec["add"] = add_metric(inst.pred, inst.gt, pts)
        rec["adds"] = adds_metric(inst.pred, inst.gt, pts)
        # nearest neighbour can never be farther than the corresponding point
        assert rec["adds"] <= rec["add"] * (1 + 1e-12) + 1e-15
        rec["mssd"] = mssd(inst.pred, inst.gt, pts, inst.symmetries)
        rec["mspd"] = mspd(inst.pred, inst.gt, pts, inst.symmetries, inst.intrinsics) if inst.intrinsics else None
    return rec


def _mean_of(records, key):
    vals = [r[key] for r in records if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def build_report(
    instances: Sequence[EvalInstance],
    pairs=DEFAULT_PAIRS,
    auc_grid=(0.25, 0.95, 0.05),
    vus_rot=(1.0, 15.0, 15),
    vus_trans=(1.0, 5.0, 5),
) -> MetricReport:
    if not instances:
        raise EmptyInput("no instances to evaluate")
    records = [evaluate_instance(i) for i in instances]
    rot = np.array([r["rot_err_deg"] for r in records])
    tr = np.array([r["trans_err_m"] for r in records])
    agg = {"count": len(records)}
    for deg, cm in pairs:
        agg[f"acc_{deg:g}deg_{cm:g}cm"] = float(np.mean(leq(rot, deg) & leq(tr, cm / 100.0)))
    agg["vus"] = vus(rot, tr, vus_rot[:2], vus_trans[:2], int(vus_rot[2]), int(vus_trans[2]))
    agg["median_rot_err_deg"] = float(np.median(rot))
    agg["median_trans_err_m"] = float(np.median(tr))
    ious = [r["iou"] for r in records if "iou" in r]
    if ious:
        for thr in (0.25, 0.5, 0.75):
            agg[f"iou{int(thr * 100)}"] = float(np.mean(geq(ious, thr)))
        agg["auc"] = auc(ious, *auc_grid)
        agg["niou_mean"] = _mean_of(records, "niou")
        for key in ("iou", "add", "adds", "mssd", "mspd"):
            agg[f"mean_{key}"] = _mean_of(records, key)
    for v in agg.values():
        if isinstance(v, float) and v != v:
            raise FloatingPointError("NaN aggregate")
    return MetricReport(records, agg)
