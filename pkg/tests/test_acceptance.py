"""Acceptance checks. Each test prints one ``PASS``/``FAIL`` line and then asserts."""

import json
import math
import time

import numpy as np
import pytest
from scipy.stats import qmc

import oracles
from posegeom import cli, harness, losses
from posegeom.alignment import WeightedCorrespondences, fit_sa3_nocs, relative_pose_two_step, umeyama_se3, umeyama_sim3
from posegeom.camera import CameraPoseEncoding, Intrinsics, backproject, fov_to_intrinsics, intrinsics_to_fov, project
from posegeom.gradcheck import run_suite
from posegeom.io import read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor
from posegeom.metrics import OrientedBox3, add_metric, adds_metric, auc, box_iou3d, vus
from posegeom.synth import SceneSpec, make_scene
from posegeom.transforms import (
    AnisoSimilarity,
    RigidTransform,
    canonical_quat,
    geodesic_angle_deg,
    quat_to_rot,
    random_rotation,
    rot_from_6d,
    rot_to_6d,
    rot_to_quat,
)

SMALL = {"width": 64, "height": 64, "n_points": 2000}


@pytest.fixture
def verdict(capsys):
    def emit(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {title} {detail}".rstrip())
        assert ok, f"criterion {n} failed: {detail}"

    return emit


# ---------------------------------------------------------------------------


def test_c01_umeyama_exactness(verdict):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = {"rot": 0.0, "trans": 0.0, "scale": 0.0}
    for i in range(1000):
        n = int(rng.integers(4, 257))
        src = rng.normal(size=(n, 3))
        r, t = random_rotation(rng), rng.normal(size=3)
        with_scale = i % 2 == 0
        s = float(rng.uniform(0.1, 10.0)) if with_scale else 1.0
        dst = s * src @ r.T + t
        tf = (umeyama_sim3 if with_scale else umeyama_se3)(src, dst).transform
        worst["rot"] = max(worst["rot"], geodesic_angle_deg(tf.r, r))
        worst["trans"] = max(worst["trans"], float(np.linalg.norm(tf.t - t)))
        if with_scale:
            worst["scale"] = max(worst["scale"], abs(tf.s - s) / s)
    dt = time.perf_counter() - t0
    ok = worst["rot"] < 1e-6 and worst["trans"] < 1e-9 and worst["scale"] < 1e-10 and dt < 5.0
    verdict(1, "Umeyama exactness", ok, f"rot={worst['rot']:.2e}deg trans={worst['trans']:.2e}m scale={worst['scale']:.2e} time={dt:.2f}s")


def test_c02_two_step_scale_invariance(verdict):
    scenes = [make_scene(SceneSpec(frames=2, **SMALL), seed) for seed in range(100)]
    t0 = time.perf_counter()
    err = spread = 0.0
    for sc in scenes:
        cam0, cam1 = sc.camera_points(0), sc.camera_points(1)
        gt = sc.gt_relative[0]
        sols = []
        for lam in (0.3, 1.0, 4.7):
            rel = relative_pose_two_step(sc.point_map[0].scaled(lam), cam0, sc.point_map[1].scaled(lam), cam1)
            err = max(err, np.abs(rel.r - gt.r).max(), np.abs(rel.t - gt.t).max())
            sols.append(np.concatenate([rel.r.ravel(), rel.t]))
        spread = max(spread, float(np.ptp(np.array(sols), axis=0).max()))
    dt = time.perf_counter() - t0
    ok = err < 1e-8 and spread < 1e-8 and dt < 10.0
    verdict(2, "two-step relative pose", ok, f"err={err:.2e} spread={spread:.2e} time={dt:.2f}s")


def test_c03_sa3_recovery(verdict):
    worst = {"rot": 0.0, "trans": 0.0, "scale": 0.0}
    monotone = True
    for seed in range(100):
        sc = make_scene(SceneSpec(**SMALL), seed)
        nocs, cam = sc.nocs_correspondences(0)
        res = fit_sa3_nocs(nocs, cam)
        gt, tf = sc.gt_pose[0], res.transform
        worst["rot"] = max(worst["rot"], geodesic_angle_deg(tf.r, gt.r))
        worst["trans"] = max(worst["trans"], float(np.linalg.norm(tf.t - gt.t)))
        worst["scale"] = max(worst["scale"], float(np.max(np.abs(tf.scale - gt.scale) / gt.scale)))
        monotone &= bool(np.all(np.diff(res.objective_history) <= 0))
    ok = worst["rot"] < 1e-6 and worst["trans"] < 1e-8 and worst["scale"] < 1e-8 and monotone
    verdict(3, "SA(3) NOCS recovery", ok, f"rot={worst['rot']:.2e}deg trans={worst['trans']:.2e}m scale={worst['scale']:.2e} monotone={monotone}")


def _params(tf):
    scale = np.atleast_1d(getattr(tf, "scale", getattr(tf, "s", 1.0)))
    return np.concatenate([tf.r.ravel(), np.broadcast_to(scale, 3), tf.t])


def test_c04_zero_weight_outliers(verdict):
    rng = np.random.default_rng(404)
    diff = 0.0
    for seed in range(100):
        sc = make_scene(SceneSpec(**SMALL), seed)
        nocs, cam = sc.nocs_correspondences(0)
        pick = rng.choice(len(nocs), size=min(300, len(nocs)), replace=False)
        src, dst = nocs[pick], cam[pick].copy()
        w = rng.uniform(0.2, 1.0, len(pick))
        bad = rng.random(len(pick)) < 0.2
        dst[bad] = rng.normal(0, 5.0, (bad.sum(), 3))
        w[bad] = 0.0
        keep = ~bad
        for solver in (umeyama_sim3, umeyama_se3, fit_sa3_nocs):
            full = solver(WeightedCorrespondences(src, dst, w)).transform
            sub = solver(WeightedCorrespondences(src[keep], dst[keep], w[keep])).transform
            diff = max(diff, float(np.abs(_params(full) - _params(sub)).max()))
    ok = diff < 1e-10
    verdict(4, "zero-weight robustness", ok, f"max param diff={diff:.2e}")


def test_c05_multiview_trend(verdict):
    medians = {}
    for views in (1, 2, 4):
        cfg = {
            "scenes": {"count": 100},
            "scene": {"frames": 4, **SMALL},
            "corruption": {"noise_sigma": 0.005, "seed": 5},
            "solver": {"views": views},
        }
        rep = harness.cmd_solve_abs(harness.load_config(cfg, task="solve-abs"))
        # anchor frame only, so every S is measured on the same 100 estimates
        errs = [f["rot_err_deg"] for r in rep["results"] for f in r["frames"] if f["frame"] == 0 and f["ok"]]
        assert len(errs) == 100
        medians[views] = float(np.median(errs))
    ok = medians[4] <= medians[2] <= medians[1]
    detail = " ".join(f"S={v}:{m:.4f}deg" for v, m in medians.items())
    verdict(5, "multi-view trend", ok, detail)


def _loss_instances(rng, name):
    if name == "chamfer":
        a, b = rng.normal(size=(int(rng.integers(1, 17)), 3)), rng.normal(size=(int(rng.integers(1, 17)), 3))
        sq = bool(rng.integers(2))
        return losses.chamfer_one_sided(a, b, sq).value, oracles.chamfer(a.tolist(), b.tolist(), sq)
    if name == "diversity":
        x = rng.uniform(-0.1, 0.1, (int(rng.integers(2, 17)), 3))
        return losses.diversity_loss(x, 0.02).value, oracles.diversity(x.tolist(), 0.02)
    if name == "info_nce":
        n, d = int(rng.integers(2, 17)), int(rng.integers(2, 9))
        z = rng.normal(size=(n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        mask = rng.random((n, n)) < 0.3
        np.fill_diagonal(mask, False)
        mask[0, 1] = True
        w = rng.uniform(0, 1, (n, n))
        tau = float(rng.uniform(0.1, 2.0))
        v = losses.info_nce(z, mask, w, tau, 1e-8).value
        return v, oracles.info_nce(z.tolist(), mask.tolist(), w.tolist(), tau, 1e-8)
    if name == "pose":
        pred = (random_rotation(rng), rng.normal(size=3), rng.uniform(0.1, 1, 3))
        gt = (random_rotation(rng), rng.normal(size=3), rng.uniform(0.1, 1, 3))
        ref = oracles.pose(*[(r.tolist(), t.tolist(), s.tolist()) for r, t, s in (pred, gt)])
        return losses.pose_loss(pred, gt).value, ref
    if name == "smooth_l1":
        m = int(rng.integers(1, 6))
        p, g = rng.normal(0, 0.1, (m, 3)), rng.normal(0, 0.1, (m, 3))
        return losses.nocs_smooth_l1(p, g, 0.1).value, oracles.smooth_l1(p.tolist(), g.tolist(), 0.1)
    if name == "aleatoric":
        h = int(rng.integers(1, 5))
        w = int(rng.integers(1, 16 // h + 1))
        c = int(rng.integers(1, 4))
        p, g = rng.normal(size=(h, w, c)), rng.normal(size=(h, w, c))
        sigma = rng.uniform(0.2, 2.0, (h, w))
        mask = rng.random((h, w)) < 0.8
        mask.flat[0] = True
        alpha = float(rng.uniform(0, 2))
        v = losses.aleatoric_map_loss(p, g, sigma, alpha, mask).value
        return v, oracles.aleatoric(p.tolist(), g.tolist(), sigma.tolist(), alpha, mask.tolist())
    if name == "scale":
        args = [rng.normal(size=3), rng.normal(size=3), rng.uniform(0.1, 1, 3), rng.uniform(0.1, 1, 3)]
        plog, gscale = float(rng.normal()), float(rng.uniform(0.1, 5))
        ref = oracles.scale(*[a.tolist() for a in args], plog, gscale)
        return losses.scale_loss(*args, plog, gscale).value, ref
    raise KeyError(name)


def test_c06_loss_oracles(verdict):
    names = ["chamfer", "diversity", "info_nce", "pose", "smooth_l1", "aleatoric", "scale"]
    worst = {}
    for k, name in enumerate(names):
        rng = np.random.default_rng([606, k])
        errs = []
        for _ in range(200):
            v, ref = _loss_instances(rng, name)
            errs.append(abs(v - ref) / max(1.0, abs(ref)))
        worst[name] = max(errs)
    ok = all(e <= 1e-12 for e in worst.values())
    verdict(6, "loss oracle equivalence", ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def test_c07_gradient_suite(verdict, tmp_path):
    rep = run_suite(points_per_loss=20, eps=1e-6, tol=1e-4)
    worst = max(v["max_rel_error"] for v in rep.values())
    cfg = tmp_path / "gc.json"
    cfg.write_text(json.dumps({"task": "gradcheck"}))
    code = cli.main(["gradcheck", "--config", str(cfg), "--out", str(tmp_path)])
    ok = all(v["passed"] for v in rep.values()) and worst < 1e-4 and code == 0
    verdict(7, "gradient suite", ok, f"losses={len(rep)} worst={worst:.2e} exit={code}")


def _qmc_iou(a, b, m=18, seed=0):
    """Quasi-Monte-Carlo IoU from scrambled Sobol samples inside ``a``."""
    u = qmc.Sobol(3, scramble=True, seed=seed).random_base2(m) - 0.5
    x = (u * a.extents) @ a.pose.r.T + a.pose.t
    local = (x - b.pose.t) @ b.pose.r
    frac = np.all(np.abs(local) <= b.extents / 2, axis=1).mean()
    va, vb = np.prod(a.extents), np.prod(b.extents)
    return va * frac / (va + vb - va * frac)


def test_c08_metric_sanity(verdict):
    rng = np.random.default_rng(808)
    mc = 0.0
    for i in range(200):
        a = OrientedBox3(RigidTransform(random_rotation(rng), rng.normal(0, 0.15, 3)), rng.uniform(0.3, 1, 3))
        b = OrientedBox3(RigidTransform(random_rotation(rng), rng.normal(0, 0.15, 3)), rng.uniform(0.3, 1, 3))
        mc = max(mc, abs(box_iou3d(a, b) - _qmc_iou(a, b, seed=i)))
    same = OrientedBox3(RigidTransform(random_rotation(rng), [0.1, 0.2, 1.0]), [0.2, 0.3, 0.4])
    ident = abs(box_iou3d(same, same) - 1.0)
    unit = lambda c: OrientedBox3(RigidTransform(np.eye(3), c), [1, 1, 1])  # noqa: E731
    third = abs(box_iou3d(unit([0, 0, 0]), unit([0.5, 0, 0])) - 1 / 3)

    adds_ok = True
    for _ in range(200):
        model = rng.uniform(-0.5, 0.5, (int(rng.integers(1, 40)), 3))
        mk = lambda: AnisoSimilarity(random_rotation(rng), rng.uniform(0.05, 0.3, 3), rng.normal(size=3))  # noqa: E731
        p, g = mk(), mk()
        adds_ok &= adds_metric(p, g, model) <= add_metric(p, g, model)

    grid = [0.25 + 0.05 * i for i in range(15)]
    curve = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 30))
        vals = rng.uniform(0, 1, n)
        vals[rng.random(n) < 0.2] = rng.choice(grid)  # exercise the inclusive boundary
        curve = max(curve, abs(auc(vals) - oracles.auc(vals.tolist(), grid)))
        rot, tr = rng.uniform(0, 16, n), rng.uniform(0, 0.06, n)
        ref = oracles.vus(rot.tolist(), tr.tolist(), list(range(1, 16)), list(range(1, 6)))
        curve = max(curve, abs(vus(rot, tr) - ref))
    ok = mc <= 3e-3 and ident <= 1e-12 and third <= 1e-9 and adds_ok and curve <= 1e-12
    verdict(8, "metric sanity", ok, f"mc={mc:.2e} identical={ident:.1e} third={third:.1e} adds<=add={adds_ok} auc/vus={curve:.1e}")


def _cli_configs(tmp_path):
    cube = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    (tmp_path / "models").mkdir()
    write_tensor(tmp_path / "models" / "cube.pgtn", cube)
    rng = np.random.default_rng(9)
    gt, pred = [], []
    for i in range(6):
        r, t, s = random_rotation(rng), rng.normal(0, 0.1, 3) + [0, 0, 1], rng.uniform(0.05, 0.3, 3)
        gt.append({"instance_id": f"i{i}", "model_id": "cube", "R": r.tolist(), "t": t.tolist(), "scale": s.tolist()})
        rp = r @ random_rotation(rng) if i % 2 else r
        pred.append({**gt[-1], "R": rp.tolist(), "t": (t + rng.normal(0, 0.01, 3)).tolist()})
    (tmp_path / "gt.json").write_text(json.dumps({"instances": gt}))
    (tmp_path / "pred.json").write_text(json.dumps({"instances": pred}))
    noisy = {"noise_sigma": 0.003, "outlier_frac": 0.1, "seed": 2}
    return {
        "synth": {"scene": {"frames": 3, **SMALL}, "corruption": noisy},
        "solve-rel": {"scenes": {"count": 3}, "scene": {"frames": 3, **SMALL}, "corruption": noisy},
        "solve-abs": {"scenes": {"count": 3}, "scene": {"frames": 2, **SMALL}, "corruption": noisy, "solver": {"k_pixels": 64}},
        "eval": {"input": {"pred": str(tmp_path / "pred.json"), "gt": str(tmp_path / "gt.json"), "models_dir": str(tmp_path / "models")}},
        "gradcheck": {"gradcheck": {"points_per_loss": 3}},
        "sweep": {"scenes": {"count": 3}, "scene": SMALL, "sweep": {"base_task": "solve-abs", "noise_sigmas": [0.0, 0.005]}},
    }


def test_c09_determinism(verdict, tmp_path, capsys):
    mismatched = []
    for task, cfg in _cli_configs(tmp_path).items():
        path = tmp_path / f"{task}.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / task
        snaps = []
        for _ in range(2):
            code = cli.main([task, "--config", str(path), "--out", str(out), "--seed", "17"])
            files = {f.name: f.read_bytes() for f in sorted(out.iterdir())}
            snaps.append((code, files))
        capsys.readouterr()
        (c0, a), (c1, b) = snaps
        if task == "synth":
            same = a == b
        else:
            ra, rb = (json.loads(x["report.json"]) for x in (a, b))
            same = harness.strip_timing(ra) == harness.strip_timing(rb)
        if c0 != 0 or c1 != 0 or not same:
            mismatched.append(task)
    verdict(9, "determinism", not mismatched, f"mismatched={mismatched or 'none'}")


def test_c10_round_trips(verdict, tmp_path):
    rng = np.random.default_rng(1010)
    worst = {"6d": 0.0, "quat": 0.0, "fov": 0.0, "proj": 0.0}
    tensor_ok = True
    for i in range(1000):
        r = random_rotation(rng)
        worst["6d"] = max(worst["6d"], float(np.abs(rot_from_6d(rot_to_6d(r)) - r).max()))
        q = canonical_quat(rng.normal(size=4))
        worst["quat"] = max(worst["quat"], float(np.abs(rot_to_quat(quat_to_rot(q)) - q).max()))

        fx, fy = rng.uniform(0.05, math.pi - 0.05, 2)
        w, h = (int(v) for v in rng.integers(1, 2000, 2))
        back = intrinsics_to_fov(fov_to_intrinsics(CameraPoseEncoding(fov_x=fx, fov_y=fy), w, h))
        worst["fov"] = max(worst["fov"], abs(back[0] - fx) / fx, abs(back[1] - fy) / fy)

        k = Intrinsics(*rng.uniform(50, 800, 2), *rng.uniform(0, 16, 2), 16, 12)
        depth = np.where(rng.random((12, 16)) < 0.7, rng.uniform(0.1, 10, (12, 16)), 0.0)
        pm = backproject(depth, k)
        valid = pm.confidence > 0
        if valid.any():
            v, u = np.nonzero(valid)
            uv = project(pm.values[valid], k)
            worst["proj"] = max(worst["proj"], float(np.abs(uv - np.stack([u, v], 1)).max()))

        dtype = [np.float32, np.float64, np.uint8][i % 3]
        shape = tuple(int(s) for s in rng.integers(0, 5, int(rng.integers(0, 5))))
        arr = (rng.uniform(0, 255, shape)).astype(dtype)
        out = tensor_from_bytes(tensor_to_bytes(arr))
        tensor_ok &= out.dtype == arr.dtype and out.shape == arr.shape and out.tobytes() == arr.tobytes()
        if i % 100 == 0:
            write_tensor(tmp_path / "t.pgtn", arr)
            tensor_ok &= read_tensor(tmp_path / "t.pgtn").tobytes() == arr.tobytes()
    ok = worst["6d"] <= 1e-12 and worst["quat"] <= 1e-9 and worst["fov"] <= 1e-10 and worst["proj"] <= 1e-6 and tensor_ok
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    verdict(10, "round-trips", ok, f"{detail} tensorfile={tensor_ok}")
