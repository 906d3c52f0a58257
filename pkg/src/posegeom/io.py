"""File formats: the PGTN tensor container, scene directories and JSON helpers.

PGTN layout (all multi-byte fields little-endian)::

    magic    4 bytes  b"PGTN"
    version  u16      currently 1
    dtype    u8       1 = f32, 2 = f64, 3 = u8
    ndim     u16
    shape    u64 * ndim
    payload  row-major, little-endian, prod(shape) * itemsize bytes
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .camera import Intrinsics, PointMap
from .errors import SchemaError
from .synth import CorruptionSpec, SceneSpec, SyntheticScene
from .transforms import AnisoSimilarity, rigid_from_dict, rigid_to_dict

MAGIC = b"PGTN"
VERSION = 1
_HEADER = struct.Struct("<4sHBH")
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}

SCENE_FORMAT = "posegeom-scene"


def _dtype_code(dtype) -> int:
    dt = np.dtype(dtype)
    for code, ref in DTYPES.items():
        if dt.kind == ref.kind and dt.itemsize == ref.itemsize:
            return code
    raise TypeError(f"unsupported tensor dtype {dt}; expected float32, float64 or uint8")


def tensor_to_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    code = _dtype_code(arr.dtype)
    header = _HEADER.pack(MAGIC, VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes(order="C")
    return header + payload


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise SchemaError("truncated tensor header")
    magic, version, code, ndim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise SchemaError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SchemaError(f"unsupported tensor version {version}")
    if code not in DTYPES:
        raise SchemaError(f"unknown dtype code {code}")
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise SchemaError("truncated tensor shape")
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    dt = DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) - off != expected:
        raise SchemaError(f"payload is {len(buf) - off} bytes, header implies {expected}")
    native = dt.newbyteorder("=")
    if expected == 0:
        return np.zeros(shape, dtype=native)
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(shape).astype(native)


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# scenes


def save_scene(scene: SyntheticScene, out_dir) -> Path:
    """Write ``scene.json`` plus depth / nocs / pointmap tensors for each frame."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    for i in range(scene.n_frames):
        files = {"depth": f"depth_{i}.pgtn", "nocs": f"nocs_{i}.pgtn", "pointmap": f"pointmap_{i}.pgtn"}
        write_tensor(out / files["depth"], scene.depth[i])
        write_tensor(out / files["nocs"], scene.nocs_map[i])
        pm = scene.point_map[i]
        write_tensor(out / files["pointmap"], np.concatenate([pm.values, pm.confidence[..., None]], axis=-1))
        frames.append(
            {
                "index": i,
                "intrinsics": scene.intrinsics[i].to_dict(),
                "gt_pose": scene.gt_pose[i].to_dict(),
                "files": files,
            }
        )
    meta = {
        "format": SCENE_FORMAT,
        "version": 1,
        "units": {"length": "m", "angle": "rad", "pixel": "px"},
        "seed": scene.seed,
        "anchor_frame": 0,
        "spec": scene.spec.to_dict(),
        "corruption": scene.corruption.to_dict() if scene.corruption else None,
        "canonical_pts": scene.canonical_pts.tolist(),
        "frames": frames,
        "gt_relative": [dict(rigid_to_dict(r), frame=i + 1) for i, r in enumerate(scene.gt_relative)],
    }
    dump_json(meta, out / "scene.json")
    return out


def load_scene(scene_dir) -> SyntheticScene:
    d = Path(scene_dir)
    meta = load_json(d / "scene.json")
    if meta.get("format") != SCENE_FORMAT:
        raise SchemaError(f"{d} is not a scene directory")
    depth, nocs, pms, poses, ks = [], [], [], [], []
    for fr in sorted(meta["frames"], key=lambda f: f["index"]):
        depth.append(read_tensor(d / fr["files"]["depth"]).astype(np.float64))
        nocs.append(read_tensor(d / fr["files"]["nocs"]).astype(np.float64))
        pm = read_tensor(d / fr["files"]["pointmap"]).astype(np.float64)
        pms.append(PointMap(pm[..., :3], pm[..., 3]))
        poses.append(AnisoSimilarity.from_dict(fr["gt_pose"]))
        ks.append(Intrinsics.from_dict(fr["intrinsics"]))
    rels = [rigid_from_dict(r) for r in sorted(meta["gt_relative"], key=lambda r: r["frame"])]
    corruption = CorruptionSpec(**meta["corruption"]) if meta.get("corruption") else None
    return SyntheticScene(
        np.asarray(meta["canonical_pts"], dtype=np.float64),
        poses, ks, depth, nocs, pms, rels, int(meta["seed"]),
        SceneSpec.from_dict(meta["spec"]), corruption,
    )
