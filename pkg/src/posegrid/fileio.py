"""On-disk formats: binary tensors, scene files, predictions, configs.

Tensors (and the depth/segmentation rasters, stored as single-channel
planes) live in a fixed 64-byte-header binary container; scene metadata
and configs are JSON with sorted keys so identical inputs produce
byte-identical files. All writes go through a temp file and an atomic
rename.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .camera import CameraIntrinsics, GridSpec, Variant
from .evaluation import EvalConfig, SceneTruth
from .geometry import (
    ObjectModel,
    Pose,
    Rotation,
    ShapeSphere,
    SymmetryKind,
    SymmetrySpec,
)
from .loss import POSE_WEIGHT_MODES, LossWeights
from .postprocess import ClusterParams, FinalPrediction
from .scenegen import BinBounds, RenderResult, Scene


class FileFormatError(ValueError):
    """Malformed file content; the message names the offending field."""


class DimensionMismatchError(FileFormatError):
    """Sizes in a file disagree with each other or with the expectation."""


TENSOR_MAGIC = b"PGTENSR1"
TENSOR_VERSION = 1
_TENSOR_HEADER = struct.Struct("<8sIIIII")
TENSOR_HEADER_SIZE = 64
_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("<i4")}
_CODE_BY_KIND = {"f": 0, "i": 1}

SCENE_FORMAT = "posegrid-scene-1"
DATASET_FORMAT = "posegrid-dataset-1"
ENCODED_FORMAT = "posegrid-encoded-1"
CONFIG_FORMAT = "posegrid-config-1"
PREDICTIONS_HEADER = [
    "scene",
    "qw",
    "qx",
    "qy",
    "qz",
    "tx",
    "ty",
    "tz",
    "confidence",
    "support",
]


def _atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def write_tensor(path, array: np.ndarray) -> None:
    """Store a 3-D array as float32 or int32, little-endian, row-major."""
    arr = np.asarray(array)
    if arr.ndim != 3:
        raise ValueError(f"tensor must be 3-D, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"tensor dims must be positive, got shape {arr.shape}")
    if arr.dtype.kind not in _CODE_BY_KIND:
        raise ValueError(f"tensor dtype must be float or integer, got {arr.dtype}")
    code = _CODE_BY_KIND[arr.dtype.kind]
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_BY_CODE[code]).tobytes()
    header = _TENSOR_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, code, *arr.shape)
    header += b"\0" * (TENSOR_HEADER_SIZE - len(header))
    _atomic_write_bytes(path, header + payload)


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < TENSOR_HEADER_SIZE:
        raise FileFormatError(
            f"{path.name}: header needs {TENSOR_HEADER_SIZE} bytes, file has {len(data)}"
        )
    magic, version, code, d0, d1, d2 = _TENSOR_HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise FileFormatError(f"{path.name}: bad magic {magic!r}")
    if version != TENSOR_VERSION:
        raise FileFormatError(f"{path.name}: unsupported version {version}")
    if code not in _DTYPE_BY_CODE:
        raise FileFormatError(f"{path.name}: unknown dtype code {code}")
    if any(d == 0 for d in (d0, d1, d2)):
        raise FileFormatError(f"{path.name}: zero dim in header ({d0}, {d1}, {d2})")
    if data[_TENSOR_HEADER.size:TENSOR_HEADER_SIZE].strip(b"\0"):
        raise FileFormatError(f"{path.name}: header padding not zeroed")
    expected = d0 * d1 * d2 * 4
    actual = len(data) - TENSOR_HEADER_SIZE
    if actual != expected:
        raise DimensionMismatchError(
            f"{path.name}: payload holds {actual} bytes, dims "
            f"{d0}x{d1}x{d2} require {expected}"
        )
    dtype = _DTYPE_BY_CODE[code]
    arr = np.frombuffer(data, dtype=dtype, offset=TENSOR_HEADER_SIZE)
    return arr.reshape(d0, d1, d2).astype(dtype.newbyteorder("="))


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _require(mapping, key: str, where: str):
    if not isinstance(mapping, dict):
        raise FileFormatError(f"{where} must be an object, got {type(mapping).__name__}")
    if key not in mapping:
        raise FileFormatError(f"missing field '{where}.{key}'")
    return mapping[key]


def _load_json(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path.name}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise FileFormatError(f"{path.name}: top level must be an object")
    return doc


def camera_to_dict(cam: CameraIntrinsics) -> dict:
    return {
        "fu": cam.fu,
        "fv": cam.fv,
        "cu": cam.cu,
        "cv": cam.cv,
        "width": cam.width,
        "height": cam.height,
        "near": cam.near,
        "far": cam.far,
    }


def camera_from_dict(doc: dict, where: str = "camera") -> CameraIntrinsics:
    kwargs = {}
    for key in ("fu", "fv", "cu", "cv", "near", "far"):
        kwargs[key] = float(_require(doc, key, where))
    for key in ("width", "height"):
        kwargs[key] = int(_require(doc, key, where))
    return CameraIntrinsics(**kwargs)


def model_to_dict(model: ObjectModel) -> dict:
    return {
        "name": model.name,
        "diameter": model.diameter,
        "symmetry": {
            "kind": model.symmetry.kind.value,
            "order": model.symmetry.order,
        },
        "surface_points": [[float(v) for v in p] for p in model.surface_points],
        "additional_points": [[float(v) for v in p] for p in model.additional_points],
        "shape_spheres": [
            {"center": [float(v) for v in s.center], "radius": s.radius}
            for s in model.shape_spheres
        ],
    }


def symmetry_from_dict(doc: dict, where: str = "symmetry") -> SymmetrySpec:
    kind_name = _require(doc, "kind", where)
    try:
        kind = SymmetryKind(kind_name)
    except ValueError as exc:
        raise FileFormatError(f"{where}.kind: unknown symmetry '{kind_name}'") from exc
    order = int(doc.get("order", 1))
    return SymmetrySpec(kind, order)


def model_from_dict(doc: dict, where: str = "model") -> ObjectModel:
    sym = symmetry_from_dict(_require(doc, "symmetry", where), f"{where}.symmetry")
    spheres = tuple(
        ShapeSphere(tuple(s["center"]), float(s["radius"]))
        for s in doc.get("shape_spheres", [])
    )
    return ObjectModel(
        symmetry=sym,
        diameter=float(_require(doc, "diameter", where)),
        surface_points=np.array(_require(doc, "surface_points", where), dtype=float),
        additional_points=np.array(doc.get("additional_points", []), dtype=float).reshape(-1, 3),
        shape_spheres=spheres,
        name=str(doc.get("name", "object")),
    )


def save_scene(directory, stem: str, scene: Scene, rendered: RenderResult) -> Path:
    """Write <stem>.json plus depth/segmentation raster files; returns the
    JSON path."""
    directory = Path(directory)
    depth_name = f"{stem}.depth.bin"
    seg_name = f"{stem}.seg.bin"
    write_tensor(directory / depth_name, rendered.depth[:, :, None].astype(np.float32))
    write_tensor(directory / seg_name, rendered.segmentation[:, :, None].astype(np.int32))
    objects = []
    for (obj_id, pose), vis in zip(scene.objects, rendered.visibility):
        objects.append(
            {
                "id": obj_id,
                "quaternion": [float(v) for v in pose.rotation.q],
                "translation": [float(v) for v in pose.translation],
                "visibility": float(vis),
            }
        )
    doc = {
        "format": SCENE_FORMAT,
        "seed": scene.seed,
        "camera": camera_to_dict(scene.camera),
        "model": model_to_dict(scene.model),
        "objects": objects,
        "rasters": {"depth": depth_name, "segmentation": seg_name},
    }
    path = directory / f"{stem}.json"
    atomic_write_text(path, _dump_json(doc))
    return path


def load_scene(path) -> tuple:
    """Read a scene JSON plus its rasters; returns (Scene, RenderResult)."""
    path = Path(path)
    doc = _load_json(path)
    fmt = _require(doc, "format", path.name)
    if fmt != SCENE_FORMAT:
        raise FileFormatError(f"{path.name}: format is '{fmt}', expected '{SCENE_FORMAT}'")
    cam = camera_from_dict(_require(doc, "camera", path.name))
    model = model_from_dict(_require(doc, "model", path.name))
    seed = int(_require(doc, "seed", path.name))

    objects = []
    visibilities = []
    for idx, entry in enumerate(_require(doc, "objects", path.name)):
        where = f"{path.name}.objects[{idx}]"
        quat = np.array(_require(entry, "quaternion", where), dtype=float)
        if quat.shape != (4,):
            raise FileFormatError(f"{where}.quaternion must have 4 entries")
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > 1e-6:
            raise FileFormatError(f"{where}.quaternion is not unit (norm {norm:.9f})")
        translation = np.array(_require(entry, "translation", where), dtype=float)
        if translation.shape != (3,):
            raise FileFormatError(f"{where}.translation must have 3 entries")
        vis = float(_require(entry, "visibility", where))
        if not 0.0 <= vis <= 1.0:
            raise FileFormatError(f"{where}.visibility {vis} outside [0, 1]")
        objects.append((int(_require(entry, "id", where)), Pose(Rotation.from_quat(quat), translation)))
        visibilities.append(vis)
    scene = Scene(tuple(objects), model, cam, seed)

    rasters = _require(doc, "rasters", path.name)
    depth = read_tensor(path.parent / _require(rasters, "depth", f"{path.name}.rasters"))
    seg = read_tensor(path.parent / _require(rasters, "segmentation", f"{path.name}.rasters"))
    for name, raster in (("depth", depth), ("segmentation", seg)):
        if raster.shape != (cam.height, cam.width, 1):
            raise DimensionMismatchError(
                f"{path.name}: {name} raster is {raster.shape[0]}x{raster.shape[1]}, "
                f"camera expects {cam.height}x{cam.width}"
            )
    rendered = RenderResult(
        depth=depth[:, :, 0],
        segmentation=seg[:, :, 0],
        visibility=np.array(visibilities, dtype=float),
    )
    return scene, rendered


def save_dataset(directory, pairs: Sequence) -> Path:
    """Write scenes plus a dataset.json manifest; pairs hold
    (Scene, RenderResult)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    camera_doc = None
    model_doc = None
    for index, (scene, rendered) in enumerate(pairs):
        stem = f"scene_{index:04d}"
        save_scene(directory, stem, scene, rendered)
        names.append(f"{stem}.json")
        if camera_doc is None:
            camera_doc = camera_to_dict(scene.camera)
            model_doc = model_to_dict(scene.model)
    doc = {
        "format": DATASET_FORMAT,
        "camera": camera_doc,
        "model": model_doc,
        "scenes": names,
    }
    path = directory / "dataset.json"
    atomic_write_text(path, _dump_json(doc))
    return path


def load_dataset(directory) -> list:
    """Read every scene named by dataset.json; returns
    [(stem, Scene, RenderResult), ...]."""
    directory = Path(directory)
    manifest = directory / "dataset.json"
    doc = _load_json(manifest)
    fmt = _require(doc, "format", manifest.name)
    if fmt != DATASET_FORMAT:
        raise FileFormatError(
            f"{manifest.name}: format is '{fmt}', expected '{DATASET_FORMAT}'"
        )
    out = []
    for name in _require(doc, "scenes", manifest.name):
        scene, rendered = load_scene(directory / name)
        out.append((Path(name).stem, scene, rendered))
    return out


def grid_to_dict(grid: GridSpec) -> dict:
    return {
        "variant": grid.variant.value,
        "sx": grid.sx,
        "sy": grid.sy,
        "sz": grid.sz,
        "poses_per_cell": grid.poses_per_cell,
    }


def grid_from_dict(doc: dict, where: str = "grid") -> GridSpec:
    name = _require(doc, "variant", where)
    try:
        variant = Variant(name)
    except ValueError as exc:
        raise FileFormatError(f"{where}.variant: unknown variant '{name}'") from exc
    return GridSpec(
        variant,
        sx=int(_require(doc, "sx", where)),
        sy=int(_require(doc, "sy", where)),
        sz=int(doc.get("sz", 1)),
        poses_per_cell=int(doc.get("poses_per_cell", 1)),
    )


def save_encoded_manifest(
    directory,
    grid: GridSpec,
    cam: CameraIntrinsics,
    model: ObjectModel,
    tensor_names: Mapping,
) -> Path:
    """Manifest tying tensor files to their scene stems and codec setup."""
    doc = {
        "format": ENCODED_FORMAT,
        "grid": grid_to_dict(grid),
        "camera": camera_to_dict(cam),
        "model": model_to_dict(model),
        "tensors": [
            {"scene": stem, "file": tensor_names[stem]}
            for stem in sorted(tensor_names, key=str)
        ],
    }
    path = Path(directory) / "encoded.json"
    atomic_write_text(path, _dump_json(doc))
    return path


def load_encoded_manifest(directory) -> dict:
    path = Path(directory) / "encoded.json"
    doc = _load_json(path)
    fmt = _require(doc, "format", path.name)
    if fmt != ENCODED_FORMAT:
        raise FileFormatError(
            f"{path.name}: format is '{fmt}', expected '{ENCODED_FORMAT}'"
        )
    tensors = {}
    for idx, entry in enumerate(_require(doc, "tensors", path.name)):
        where = f"{path.name}.tensors[{idx}]"
        tensors[str(_require(entry, "scene", where))] = str(_require(entry, "file", where))
    return {
        "grid": grid_from_dict(_require(doc, "grid", path.name), f"{path.name}.grid"),
        "camera": camera_from_dict(_require(doc, "camera", path.name)),
        "model": model_from_dict(_require(doc, "model", path.name)),
        "tensors": tensors,
    }


def scene_truths(directory) -> dict:
    """Ground truth per scene stem, shaped for evaluate_dataset."""
    truths = {}
    for stem, scene, rendered in load_dataset(directory):
        truths[stem] = SceneTruth(
            model=scene.model,
            ground_truth=tuple(
                (pose, float(vis))
                for (_, pose), vis in zip(scene.objects, rendered.visibility)
            ),
        )
    return truths


def write_predictions(path, by_scene: Mapping) -> None:
    """CSV of final predictions; floats use repr so parsing is lossless."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(PREDICTIONS_HEADER)
    for scene_id in sorted(by_scene, key=str):
        for pred in by_scene[scene_id]:
            q = pred.pose.rotation.q
            t = pred.pose.translation
            writer.writerow(
                [scene_id]
                + [repr(float(v)) for v in q]
                + [repr(float(v)) for v in t]
                + [repr(float(pred.confidence)), str(pred.support)]
            )
    atomic_write_text(path, buffer.getvalue())


def read_predictions(path) -> dict:
    path = Path(path)
    rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    if not rows:
        raise FileFormatError(f"{path.name}: empty predictions file")
    if rows[0] != PREDICTIONS_HEADER:
        raise FileFormatError(
            f"{path.name}: header is {rows[0]}, expected {PREDICTIONS_HEADER}"
        )
    by_scene: dict = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(PREDICTIONS_HEADER):
            raise FileFormatError(
                f"{path.name}:{lineno}: {len(row)} columns, expected {len(PREDICTIONS_HEADER)}"
            )
        scene_id = row[0]
        try:
            values = [float(v) for v in row[1:8]]
            confidence = float(row[8])
            support = int(row[9])
        except ValueError as exc:
            raise FileFormatError(f"{path.name}:{lineno}: {exc}") from exc
        pose = Pose(Rotation.from_quat(values[0:4]), np.array(values[4:7]))
        by_scene.setdefault(scene_id, []).append(
            FinalPrediction(pose=pose, confidence=confidence, support=support)
        )
    return by_scene


def default_config() -> dict:
    """Full default experiment description; every knob is explicit."""
    grids = {}
    for variant in Variant:
        spec = GridSpec.for_variant(variant)
        grids[variant.value] = {
            "sx": spec.sx,
            "sy": spec.sy,
            "sz": spec.sz,
            "poses_per_cell": spec.poses_per_cell,
        }
    return {
        "format": CONFIG_FORMAT,
        "camera": {
            "fu": 128.0,
            "fv": 128.0,
            "cu": 64.0,
            "cv": 64.0,
            "width": 128,
            "height": 128,
            "near": 0.5,
            "far": 2.0,
        },
        "model": {
            "symmetry": {"kind": "none", "order": 1},
            "diameter": 0.24,
            "seed": 7,
            "surface_count": 64,
            "name": None,
        },
        "scene": {
            "min_objects": 5,
            "max_objects": 30,
            "bounds": {
                "lower": [-0.46, -0.46, 1.05],
                "upper": [0.46, 0.46, 1.55],
            },
        },
        "grids": grids,
        "loss": {
            "presence": 0.1,
            "visibility": 0.25,
            "position": 1.0,
            "orientation": 1.0,
            "pose_mode": "cubic",
        },
        "cluster": {
            "eps": 0.024,
            "min_points": 1,
            "confidence_threshold": 0.0,
        },
        "eval": {
            "vis_cutoff": 0.5,
            "radius_frac": 0.1,
        },
        "decode": {
            "threshold": 0.5,
        },
    }


def _merge_config(base: dict, override: dict, where: str) -> dict:
    merged = {}
    for key, default in base.items():
        if key not in override:
            merged[key] = default
            continue
        value = override[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise FileFormatError(f"config field '{where}.{key}' must be an object")
            merged[key] = _merge_config(default, value, f"{where}.{key}")
        else:
            merged[key] = value
    for key in override:
        if key not in base:
            raise FileFormatError(f"unknown config field '{where}.{key}'")
    return merged


def load_config(path) -> dict:
    """Config file merged over the defaults; unknown fields are errors."""
    doc = _load_json(path)
    fmt = doc.get("format", CONFIG_FORMAT)
    if fmt != CONFIG_FORMAT:
        raise FileFormatError(
            f"{Path(path).name}: format is '{fmt}', expected '{CONFIG_FORMAT}'"
        )
    return _merge_config(default_config(), doc, "config")


def save_config(path, config: dict) -> None:
    atomic_write_text(path, _dump_json(config))


def config_camera(config: dict) -> CameraIntrinsics:
    return camera_from_dict(config["camera"])


def config_model(config: dict) -> ObjectModel:
    from .scenegen import make_model

    section = config["model"]
    sym = symmetry_from_dict(section["symmetry"], "config.model.symmetry")
    name = section.get("name")
    return make_model(
        sym,
        diameter=float(section["diameter"]),
        seed=int(section["seed"]),
        surface_count=int(section["surface_count"]),
        name=name if name is None else str(name),
    )


def config_bounds(config: dict) -> BinBounds:
    section = config["scene"]["bounds"]
    return BinBounds(np.array(section["lower"], dtype=float), np.array(section["upper"], dtype=float))


def config_counts(config: dict) -> tuple:
    section = config["scene"]
    lo = int(section["min_objects"])
    hi = int(section["max_objects"])
    if not 1 <= lo <= hi:
        raise ValueError(f"object count range [{lo}, {hi}] is invalid")
    return lo, hi


def config_grid(config: dict, variant: Variant) -> GridSpec:
    section = config["grids"][variant.value]
    return GridSpec(
        variant,
        sx=int(section["sx"]),
        sy=int(section["sy"]),
        sz=int(section["sz"]),
        poses_per_cell=int(section["poses_per_cell"]),
    )


def config_loss(config: dict) -> LossWeights:
    section = config["loss"]
    mode = str(section["pose_mode"])
    if mode not in POSE_WEIGHT_MODES:
        raise ValueError(f"pose_mode must be one of {POSE_WEIGHT_MODES}, got '{mode}'")
    return LossWeights(
        presence=float(section["presence"]),
        visibility=float(section["visibility"]),
        position=float(section["position"]),
        orientation=float(section["orientation"]),
        pose_mode=mode,
    )


def config_cluster(config: dict) -> ClusterParams:
    section = config["cluster"]
    return ClusterParams(
        eps=float(section["eps"]),
        min_points=int(section["min_points"]),
        confidence_threshold=float(section["confidence_threshold"]),
    )


def config_eval(config: dict) -> EvalConfig:
    section = config["eval"]
    return EvalConfig(
        vis_cutoff=float(section["vis_cutoff"]),
        radius_frac=float(section["radius_frac"]),
    )


def config_threshold(config: dict) -> float:
    value = float(config["decode"]["threshold"])
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ValueError(f"decode threshold must be in [0, 1], got {value}")
    return value
