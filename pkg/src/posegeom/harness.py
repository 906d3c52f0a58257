"""Experiment drivers behind the CLI: synth, solve-rel, solve-abs, eval, gradcheck, sweep.

Every command takes a validated config dict and returns a JSON-ready report.
Reports are deterministic for a fixed config except for ``wall_time_s``.
Per-frame solver failures are recorded and the run continues.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, gradcheck
from .alignment import fit_sa3_nocs, solve_relative_pose
from .camera import Intrinsics
from .errors import InvalidConfig, MissingModel, PoseGeomError, SchemaError
from .io import dump_json, load_json, load_scene, read_tensor, save_scene, sha256_file
from .losses import LossConfig
from .metrics import (
    DEFAULT_PAIRS,
    EvalInstance,
    ModelPoints,
    build_report,
    leq,
    vus,
)
from .synth import CorruptionSpec, SceneSpec, corrupt, make_scene, rng_for, scale_point_maps
from .transforms import AnisoSimilarity, RigidTransform, geodesic_angle_deg, rigid_to_dict, se3_inverse

log = logging.getLogger(__name__)

TASKS = ("synth", "solve-abs", "solve-rel", "eval", "gradcheck", "sweep")

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "scenes": {"count": 1},
    "corruption": {},
    "solver": {"k_pixels": 1024, "views": 1, "relative": "oracle", "point_map_scale": 1.0},
    "thresholds": {
        "pairs": [list(p) for p in DEFAULT_PAIRS],
        "auc": {"start": 0.25, "stop": 0.95, "step": 0.05},
        "vus": {"rot": [1.0, 15.0, 15], "trans": [1.0, 5.0, 5]},
    },
    "gradcheck": {"points_per_loss": 20, "eps": 1e-6, "tol": 1e-4, "seed": 0},
    "sweep": {"base_task": "solve-rel", "noise_sigmas": [0.0, 0.001, 0.005, 0.01], "views": [1], "point_map_scales": [1.0]},
}


def _schema(name: str) -> dict:
    return json.loads(resources.files("posegeom").joinpath("schemas", name).read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(source, task=None, seed=None, out=None, workers=None) -> dict:
    """Validate a config (path or dict) against the shipped schema and fill defaults."""
    raw = load_json(source) if isinstance(source, (str, Path)) else copy.deepcopy(source)
    try:
        jsonschema.validate(raw, _schema("config.schema.json"))
    except jsonschema.ValidationError as exc:
        raise InvalidConfig(f"config rejected: {exc.message}") from exc
    if task is not None:
        if raw.get("task", task) != task:
            raise InvalidConfig(f"config is for task {raw['task']!r}, not {task!r}")
        raw["task"] = task
    if raw.get("task") not in TASKS:
        raise InvalidConfig("config does not name a task")
    cfg = _merge(DEFAULTS, raw)
    for key, val in (("seed", seed), ("output", out), ("workers", workers)):
        if val is not None:
            cfg[key] = val
    return cfg


def validate_report(report: dict) -> None:
    jsonschema.validate(report, _schema("report.schema.json"))


# ---------------------------------------------------------------------------
# helpers


def _map(fn, items, workers: int):
    """Ordered map; results come back in input order regardless of completion order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _scene_jobs(cfg: dict) -> list:
    dirs = cfg.get("input", {}).get("scene_dirs")
    if dirs:
        return [{"scene_id": str(d), "dir": str(d)} for d in dirs]
    spec = cfg.get("scene", {})
    return [
        {"scene_id": f"gen-{cfg['seed'] + i}", "spec": spec, "seed": cfg["seed"] + i}
        for i in range(cfg["scenes"]["count"])
    ]


def _materialize(job: dict):
    if "dir" in job:
        return load_scene(job["dir"])
    return make_scene(SceneSpec.from_dict(job["spec"]), job["seed"])


def _prepare(job: dict, corruption: dict, pm_scale: float):
    scene = _materialize(job)
    spec = CorruptionSpec(**corruption)
    if spec != CorruptionSpec(seed=spec.seed):
        scene = corrupt(scene, spec)
    if pm_scale != 1.0:
        scene = scale_point_maps(scene, pm_scale)
    return scene


def _failure(frame: int, exc: Exception) -> dict:
    return {"frame": frame, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _aggregate(results: list, thresholds: dict) -> dict:
    frames = [f for r in results for f in r["frames"]]
    ok = [f for f in frames if f["ok"]]
    agg = {"frames_total": len(frames), "frames_ok": len(ok), "frames_failed": len(frames) - len(ok)}
    if not ok:
        return agg
    rot = np.array([f["rot_err_deg"] for f in ok])
    tr = np.array([f["trans_err_m"] for f in ok])
    for deg, cm in thresholds["pairs"]:
        agg[f"acc_{deg:g}deg_{cm:g}cm"] = float(np.mean(leq(rot, deg) & leq(tr, cm / 100.0)))
    v = thresholds["vus"]
    agg["vus"] = vus(rot, tr, v["rot"][:2], v["trans"][:2], int(v["rot"][2]), int(v["trans"][2]))
    agg["median_rot_err_deg"] = float(np.median(rot))
    agg["median_trans_err_m"] = float(np.median(tr))
    agg["max_rot_err_deg"] = float(rot.max())
    agg["max_trans_err_m"] = float(tr.max())
    scale = [f["scale_rel_err"] for f in ok if "scale_rel_err" in f]
    if scale:
        agg["median_scale_rel_err"] = float(np.median(scale))
    return agg


def _report(task: str, cfg: dict, results: list, aggregate: dict, t0: float) -> dict:
    rep = {
        "toolkit_version": __version__,
        "task": task,
        "config": cfg,
        "results": results,
        "aggregate": aggregate,
        "wall_time_s": time.perf_counter() - t0,
    }
    validate_report(rep)
    return rep


# ---------------------------------------------------------------------------
# synth


def cmd_synth(cfg: dict, out_dir=None) -> dict:
    t0 = time.perf_counter()
    out = Path(out_dir or cfg.get("output") or "scene")
    scene = make_scene(SceneSpec.from_dict(cfg.get("scene", {})), cfg["seed"])
    save_scene(scene, out)
    files = sorted(p.name for p in out.iterdir())
    sums = {name: sha256_file(out / name) for name in files}
    result = {"scene_dir": str(out), "files": files, "sha256": sums}
    agg = {"frames": scene.n_frames, "relative_poses": len(scene.gt_relative)}
    return _report("synth", cfg, [result], agg, t0)


# ---------------------------------------------------------------------------
# solve-rel


def _solve_rel_job(args) -> dict:
    job, corruption, pm_scale = args
    scene = _prepare(job, corruption, pm_scale)
    frames = []
    anchor_cam = scene.camera_points(0)
    for i in range(1, scene.n_frames):
        try:
            res = solve_relative_pose(scene.point_map[0], anchor_cam, scene.point_map[i], scene.camera_points(i))
        except PoseGeomError as exc:
            frames.append(_failure(i, exc))
            continue
        gt = scene.gt_relative[i - 1]
        frames.append(
            {
                "frame": i,
                "ok": True,
                "rot_err_deg": geodesic_angle_deg(res.relative.r, gt.r),
                "trans_err_m": float(np.linalg.norm(res.relative.t - gt.t)),
                "estimate": rigid_to_dict(res.relative),
                "anchor_scale": res.anchor_calibration.s,
                "anchor_rmse": res.anchor_rmse,
                "query_rmse": res.query_rmse,
            }
        )
    return {"scene_id": job["scene_id"], "frames": frames}


def _run_rel(cfg, corruption, pm_scale):
    jobs = [(j, corruption, pm_scale) for j in _scene_jobs(cfg)]
    return _map(_solve_rel_job, jobs, cfg["workers"])


def cmd_solve_rel(cfg: dict) -> dict:
    t0 = time.perf_counter()
    results = _run_rel(cfg, cfg["corruption"], cfg["solver"]["point_map_scale"])
    return _report("solve-rel", cfg, results, _aggregate(results, cfg["thresholds"]), t0)


# ---------------------------------------------------------------------------
# solve-abs


def sample_pixels(scene, frame: int, k: int):
    """``k`` valid pixels of one frame (all of them if fewer), drawn without replacement."""
    valid = np.flatnonzero(scene.valid_mask(frame).ravel())
    if k < len(valid):
        valid = np.sort(rng_for(scene.seed, "sampler", frame).choice(valid, size=k, replace=False))
    nocs = scene.nocs_map[frame].reshape(-1, 3)[valid]
    cam = scene.camera_points(frame).values.reshape(-1, 3)[valid]
    return nocs, cam


def _abs_record(frame: int, est: AnisoSimilarity, gt: AnisoSimilarity, res, views: int) -> dict:
    return {
        "frame": frame,
        "ok": True,
        "views": views,
        "rot_err_deg": geodesic_angle_deg(est.r, gt.r),
        "trans_err_m": float(np.linalg.norm(est.t - gt.t)),
        "scale_rel_err": float(np.abs(est.scale / gt.scale - 1.0).max()),
        "estimate": est.to_dict(),
        "rmse": res.rmse,
        "iterations": res.iterations,
    }


def _solve_abs_job(args) -> dict:
    job, corruption, solver = args
    scene = _prepare(job, corruption, 1.0)
    k = solver["k_pixels"]
    views = min(solver["views"], scene.n_frames)
    frames = []
    if views == 1:
        for i in range(scene.n_frames):
            try:
                res = fit_sa3_nocs(*sample_pixels(scene, i, k))
            except PoseGeomError as exc:
                frames.append(_failure(i, exc))
                continue
            frames.append(_abs_record(i, res.transform, scene.gt_pose[i], res, 1))
        return {"scene_id": job["scene_id"], "frames": frames}

    # multi-view: express every view's observations in the anchor camera and pool them
    try:
        src, dst = [], []
        anchor_cam = scene.camera_points(0)
        for i in range(views):
            nocs, cam = sample_pixels(scene, i, k)
            if i > 0:
                if solver["relative"] == "oracle":
                    rel = scene.gt_relative[i - 1]
                else:
                    rel = solve_relative_pose(
                        scene.point_map[0], anchor_cam, scene.point_map[i], scene.camera_points(i)
                    ).relative
                cam = se3_inverse(rel).apply(cam)
            src.append(nocs)
            dst.append(cam)
        res = fit_sa3_nocs(np.concatenate(src), np.concatenate(dst))
        frames.append(_abs_record(0, res.transform, scene.gt_pose[0], res, views))
    except PoseGeomError as exc:
        frames.append(_failure(0, exc))
    return {"scene_id": job["scene_id"], "frames": frames}


def _run_abs(cfg, corruption, solver):
    jobs = [(j, corruption, solver) for j in _scene_jobs(cfg)]
    return _map(_solve_abs_job, jobs, cfg["workers"])


def cmd_solve_abs(cfg: dict) -> dict:
    t0 = time.perf_counter()
    results = _run_abs(cfg, cfg["corruption"], cfg["solver"])
    return _report("solve-abs", cfg, results, _aggregate(results, cfg["thresholds"]), t0)


# ---------------------------------------------------------------------------
# eval


def _read_pose_file(path) -> dict:
    data = load_json(path)
    try:
        jsonschema.validate(data, _schema("eval_input.schema.json"))
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"{path}: {exc.message}") from exc
    out = {}
    for rec in data["instances"]:
        if rec["instance_id"] in out:
            raise SchemaError(f"{path}: duplicate instance id {rec['instance_id']!r}")
        out[rec["instance_id"]] = rec
    return out


def _load_model(models_dir, model_id):
    base = Path(models_dir)
    pts_path = base / f"{model_id}.pgtn"
    if not pts_path.exists():
        raise MissingModel(f"no model file {pts_path}")
    model = ModelPoints(read_tensor(pts_path).astype(np.float64))
    sym_path = base / f"{model_id}.symmetries.json"
    sym = None
    if sym_path.exists():
        sym = [RigidTransform(s["R"], s["t"]) for s in load_json(sym_path)["symmetries"]]
    return model, sym


def _pose_from_record(rec) -> AnisoSimilarity:
    return AnisoSimilarity(rec["R"], rec.get("scale", [1.0, 1.0, 1.0]), rec["t"])


def cmd_eval(cfg: dict) -> dict:
    t0 = time.perf_counter()
    inp = cfg.get("input", {})
    for key in ("pred", "gt"):
        if key not in inp:
            raise InvalidConfig(f"eval needs input.{key}")
    preds = _read_pose_file(inp["pred"])
    gts = _read_pose_file(inp["gt"])
    ids = sorted(set(preds) & set(gts))
    if not ids:
        raise SchemaError("prediction and ground-truth files share no instance ids")
    models = {}
    instances = []
    for iid in ids:
        g = gts[iid]
        model = sym = None
        mid = g.get("model_id")
        if mid is not None:
            if "models_dir" not in inp:
                raise MissingModel(f"instance {iid!r} names model {mid!r} but no models_dir is configured")
            if mid not in models:
                models[mid] = _load_model(inp["models_dir"], mid)
            model, sym = models[mid]
        k = Intrinsics.from_dict(g["intrinsics"]) if "intrinsics" in g else None
        instances.append(
            EvalInstance(iid, _pose_from_record(preds[iid]), _pose_from_record(g), model, sym, k, g.get("category"))
        )
    th = cfg["thresholds"]
    auc_grid = (th["auc"]["start"], th["auc"]["stop"], th["auc"]["step"])
    rep = build_report(instances, [tuple(p) for p in th["pairs"]], auc_grid, tuple(th["vus"]["rot"]), tuple(th["vus"]["trans"]))
    agg = dict(rep.aggregates)
    agg["unmatched_pred"] = len(set(preds) - set(gts))
    agg["unmatched_gt"] = len(set(gts) - set(preds))
    return _report("eval", cfg, rep.records, agg, t0)


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(cfg: dict) -> dict:
    t0 = time.perf_counter()
    g = cfg["gradcheck"]
    try:
        loss_cfg = LossConfig(**cfg.get("loss", {}))
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc
    suite = gradcheck.run_suite(g["points_per_loss"], g["eps"], g["tol"], g["seed"], loss_cfg)
    results = [dict(loss=name, **vals) for name, vals in suite.items()]
    agg = {"all_passed": all(r["passed"] for r in results), "losses": len(results)}
    return _report("gradcheck", cfg, results, agg, t0)


# ---------------------------------------------------------------------------
# sweep


def _anchor_median(results) -> float:
    errs = [f["rot_err_deg"] for r in results for f in r["frames"] if f["ok"] and f["frame"] == 0]
    return float(np.median(errs)) if errs else float("nan")


# errors below this are solver round-off; their ordering carries no signal
MONOTONE_FLOOR_DEG = 1e-9


def _non_decreasing(xs) -> bool:
    return all(b >= a or max(a, b) < MONOTONE_FLOOR_DEG for a, b in zip(xs, xs[1:]))


def cmd_sweep(cfg: dict) -> dict:
    """Grid over noise levels (and views / point-map scales) of a solve task.

    For ``solve-abs`` the tracked statistic is the anchor-frame median rotation
    error; for ``solve-rel`` the median over all query frames.
    """
    t0 = time.perf_counter()
    sw = cfg["sweep"]
    base = sw["base_task"]
    settings = []
    for sigma in sw["noise_sigmas"]:
        corruption = _merge(cfg["corruption"], {"noise_sigma": sigma})
        if base == "solve-abs":
            for views in sw["views"]:
                solver = _merge(cfg["solver"], {"views": views})
                results = _run_abs(cfg, corruption, solver)
                agg = _aggregate(results, cfg["thresholds"])
                settings.append({"noise_sigma": sigma, "views": views, "anchor_median_rot_err_deg": _anchor_median(results), **agg})
        else:
            for lam in sw["point_map_scales"]:
                results = _run_rel(cfg, corruption, lam)
                agg = _aggregate(results, cfg["thresholds"])
                settings.append({"noise_sigma": sigma, "point_map_scale": lam, **agg})
    key = "anchor_median_rot_err_deg" if base == "solve-abs" else "median_rot_err_deg"
    summary = {"settings": len(settings), "statistic": key}
    groups = {}
    for s in settings:
        groups.setdefault(s.get("views", s.get("point_map_scale")), []).append(s.get(key, float("nan")))
    summary["monotone_in_noise"] = all(_non_decreasing(v) for v in groups.values())
    if base == "solve-abs":
        by_sigma = {}
        for s in settings:
            by_sigma.setdefault(s["noise_sigma"], []).append(s[key])
        # more views should never hurt: statistic non-increasing across the views list
        summary["monotone_in_views"] = all(_non_decreasing(v[::-1]) for v in by_sigma.values())
    for s in settings:
        for k_, v in list(s.items()):
            if isinstance(v, float) and v != v:
                s[k_] = None
    return _report("sweep", cfg, settings, summary, t0)


COMMANDS = {
    "synth": cmd_synth,
    "solve-rel": cmd_solve_rel,
    "solve-abs": cmd_solve_abs,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def run(task: str, cfg: dict) -> dict:
    return COMMANDS[task](cfg)


def write_report(report: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    dump_json(report, path)
    return path


def strip_timing(report: dict) -> dict:
    rep = dict(report)
    rep.pop("wall_time_s", None)
    return rep


__all__ = ["load_config", "run", "COMMANDS", "write_report", "strip_timing", "validate_report"]
