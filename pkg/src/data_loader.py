"""
data_loader.py - Scene JSON and instance-mask directory I/O.

Scene file:
    {"version": "1",
     "grid": {"x_min", "x_max", "y_min", "y_max", "resolution"},
     "ego": [x, y],                                   (optional)
     "instances": [{"class": "divider", "points": [[x, y], ...],
                    "closed": false, "confidence": 0.9}]}   (confidence optional)

A corpus file holds {"version": "1", "scenes": [<scene>, ...]}.

Mask directory: one 8-bit image per mask (PGM P5 by default, PNG optional,
image row 0 = largest y) plus a ``masks.json`` manifest listing file,
class, confidence and flags in order. Every file is written to a temp file
and renamed into place.
"""

import json
import logging
import os
import tempfile
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from PIL import Image

from config.config import (
    COORD_DECIMALS, EGO_POSITION, MASK_MANIFEST_NAME, SCENE_FORMAT_VERSION,
)
from src.core_types import GridSpec, InstanceMask, MapClass, Scene, VectorInstance
from src.errors import (
    GeometryError, InvalidInstanceError, SceneParseError, SchemaError,
)

logger = logging.getLogger(__name__)

SCENE_KEYS = {"version", "grid", "ego", "instances"}
CORPUS_KEYS = {"version", "scenes"}
INSTANCE_KEYS = {"class", "points", "closed", "confidence"}
GRID_KEYS = {"x_min", "x_max", "y_min", "y_max", "resolution"}
MASK_FORMATS = {"pgm": "PPM", "png": "PNG"}


# ============================================================
# Atomic writes
# ============================================================
def atomic_write(path: str, write: Callable[[Any], None]) -> None:
    """Run ``write(fileobj)`` on a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_json(obj: Any, path: str) -> None:
    data = dump_json(obj).encode("utf-8")
    atomic_write(path, lambda fh: fh.write(data))


def save_frame_csv(df: pd.DataFrame, path: str) -> None:
    data = df.to_csv(float_format="%.6f").encode("utf-8")
    atomic_write(path, lambda fh: fh.write(data))


def _read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SceneParseError(f"file not found: {path}")
    except IsADirectoryError:
        raise SceneParseError(f"{path} is a directory")
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SceneParseError(f"{path}: not valid JSON ({exc})")


# ============================================================
# Scene <-> dict
# ============================================================
def _check_keys(obj: dict, allowed: set, where: str, strict: bool) -> None:
    unknown = sorted(set(obj) - allowed)
    if not unknown:
        return
    if strict:
        raise SchemaError(f"{where}: unknown field(s) {unknown}")
    logger.warning("%s: ignoring unknown field(s) %s", where, unknown)


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise SchemaError(f"{where}: missing required field '{key}'")
    return obj[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {value!r}")
    return float(value)


def grid_from_dict(obj: Any, strict: bool = False) -> GridSpec:
    if not isinstance(obj, dict):
        raise SchemaError("grid: expected an object")
    _check_keys(obj, GRID_KEYS, "grid", strict)
    values = {k: _number(_require(obj, k, "grid"), f"grid.{k}") for k in sorted(GRID_KEYS)}
    try:
        return GridSpec(**values)
    except GeometryError as exc:
        raise SchemaError(f"grid: {exc}")


def _points_from(obj: Any, where: str) -> np.ndarray:
    if not isinstance(obj, list) or not all(isinstance(p, list) and len(p) == 2 for p in obj):
        raise SchemaError(f"{where}: points must be a list of [x, y] pairs")
    return np.array([[_number(x, where), _number(y, where)] for x, y in obj], dtype=np.float64)


def instance_from_dict(obj: Any, where: str, strict: bool = False) -> VectorInstance:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    _check_keys(obj, INSTANCE_KEYS, where, strict)
    name = _require(obj, "class", where)
    if not isinstance(name, str):
        raise SchemaError(f"{where}: class must be a string")
    map_class = MapClass.from_string(name)
    points = _points_from(_require(obj, "points", where), f"{where}.points")
    closed = obj.get("closed", map_class is MapClass.PED_CROSSING)
    if not isinstance(closed, bool):
        raise SchemaError(f"{where}: closed must be true or false")
    confidence = _number(obj.get("confidence", 1.0), f"{where}.confidence")
    if closed and len(points) > 1 and np.array_equal(points[0], points[-1]):
        points = points[:-1]
    try:
        return VectorInstance.from_points(map_class, points, closed, confidence)
    except InvalidInstanceError as exc:
        raise SchemaError(f"{where}: {exc}")


def scene_from_dict(obj: Any, strict: bool = False, where: str = "scene") -> Scene:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    _check_keys(obj, SCENE_KEYS, where, strict)
    version = str(obj.get("version", SCENE_FORMAT_VERSION))
    if version != SCENE_FORMAT_VERSION:
        raise SchemaError(f"{where}: unsupported version '{version}'")
    grid = grid_from_dict(_require(obj, "grid", where), strict)
    ego = obj.get("ego", list(EGO_POSITION))
    if not isinstance(ego, list) or len(ego) != 2:
        raise SchemaError(f"{where}: ego must be [x, y]")
    ego = (_number(ego[0], f"{where}.ego"), _number(ego[1], f"{where}.ego"))
    raw = obj.get("instances", [])
    if not isinstance(raw, list):
        raise SchemaError(f"{where}: instances must be a list")
    instances = [instance_from_dict(item, f"{where}.instances[{k}]", strict) for k, item in enumerate(raw)]
    return Scene.create(grid, instances, ego)


def _round_points(points: np.ndarray) -> List[List[float]]:
    # +0.0 folds -0.0 so files are byte-stable
    return [[round(float(x), COORD_DECIMALS) + 0.0, round(float(y), COORD_DECIMALS) + 0.0]
            for x, y in points]


def instance_to_dict(inst: VectorInstance) -> dict:
    out = {"class": inst.cls.value, "points": _round_points(inst.points), "closed": inst.closed}
    if inst.confidence != 1.0:
        out["confidence"] = round(inst.confidence, COORD_DECIMALS)
    return out


def scene_to_dict(scene: Scene, instances: Optional[Sequence[VectorInstance]] = None) -> dict:
    """Serialise a scene; ``instances`` replaces the scene's own vectors when given."""
    vectors = scene.gt_vectors if instances is None else instances
    return {
        "version": SCENE_FORMAT_VERSION,
        "grid": scene.grid.to_dict(),
        "ego": _round_points([scene.ego])[0],
        "instances": [instance_to_dict(v) for v in vectors],
    }


# ============================================================
# Scene files
# ============================================================
def load_scene(path: str, strict: bool = False) -> Scene:
    """Load one scene file. Instances are validated and clipped to the grid, in file order."""
    return scene_from_dict(_read_json(path), strict, where=os.path.basename(path))


def load_scenes(path: str, strict: bool = False) -> List[Scene]:
    """Load a corpus file, or a single scene file as a one-scene list."""
    obj = _read_json(path)
    if isinstance(obj, dict) and "scenes" in obj:
        _check_keys(obj, CORPUS_KEYS, os.path.basename(path), strict)
        if not isinstance(obj["scenes"], list):
            raise SchemaError(f"{path}: scenes must be a list")
        return [scene_from_dict(s, strict, where=f"scenes[{k}]") for k, s in enumerate(obj["scenes"])]
    return [scene_from_dict(obj, strict, where=os.path.basename(path))]


def save_scene(scene: Scene, path: str, instances: Optional[Sequence[VectorInstance]] = None) -> None:
    save_json(scene_to_dict(scene, instances), path)


def save_scenes(scenes: Sequence[Scene], path: str,
                instances: Optional[Sequence[Sequence[VectorInstance]]] = None) -> None:
    docs = [scene_to_dict(s, None if instances is None else instances[k]) for k, s in enumerate(scenes)]
    save_json({"version": SCENE_FORMAT_VERSION, "scenes": docs}, path)


# ============================================================
# Mask directories
# ============================================================
def _to_image(bitmap: np.ndarray) -> Image.Image:
    pixels = np.round(np.asarray(bitmap, dtype=np.float64) * 255.0).astype(np.uint8)
    return Image.fromarray(np.ascontiguousarray(np.flipud(pixels)))


def _from_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("L"), dtype=np.uint8)
    except FileNotFoundError:
        raise SceneParseError(f"mask file not found: {path}")
    except OSError as exc:
        raise SceneParseError(f"{path}: unreadable image ({exc})")
    pixels = np.flipud(pixels)
    if np.all((pixels == 0) | (pixels == 255)):
        return (pixels == 255).astype(np.uint8)
    return pixels.astype(np.float64) / 255.0


def save_masks(masks: Sequence[InstanceMask], out_dir: str, grid: GridSpec,
               fmt: str = "pgm", ego=EGO_POSITION) -> List[str]:
    """Write masks and their manifest; returns the mask file paths."""
    if fmt not in MASK_FORMATS:
        raise SchemaError(f"unknown mask format '{fmt}' (expected one of {sorted(MASK_FORMATS)})")
    for mask in masks:
        mask.check_grid(grid)
    os.makedirs(out_dir, exist_ok=True)
    entries, paths = [], []
    for k, mask in enumerate(masks):
        name = f"mask_{k:03d}_{mask.cls.value}.{fmt}"
        path = os.path.join(out_dir, name)
        img = _to_image(mask.bitmap)
        atomic_write(path, lambda fh, img=img: img.save(fh, format=MASK_FORMATS[fmt]))
        entries.append({
            "file": name,
            "class": mask.cls.value,
            "confidence": round(mask.confidence, COORD_DECIMALS),
            "flags": sorted(mask.flags),
        })
        paths.append(path)
    manifest = {
        "version": SCENE_FORMAT_VERSION,
        "grid": grid.to_dict(),
        "ego": _round_points([ego])[0],
        "masks": entries,
    }
    save_json(manifest, os.path.join(out_dir, MASK_MANIFEST_NAME))
    return paths


def load_masks(mask_dir: str, strict: bool = False):
    """Read a mask directory back as (grid, ego, masks) in manifest order."""
    manifest_path = os.path.join(mask_dir, MASK_MANIFEST_NAME)
    obj = _read_json(manifest_path)
    if not isinstance(obj, dict):
        raise SchemaError(f"{manifest_path}: expected an object")
    _check_keys(obj, {"version", "grid", "ego", "masks"}, MASK_MANIFEST_NAME, strict)
    grid = grid_from_dict(_require(obj, "grid", MASK_MANIFEST_NAME), strict)
    ego = tuple(obj.get("ego", EGO_POSITION))
    masks: List[InstanceMask] = []
    for k, entry in enumerate(_require(obj, "masks", MASK_MANIFEST_NAME)):
        where = f"masks[{k}]"
        _check_keys(entry, {"file", "class", "confidence", "flags"}, where, strict)
        map_class = MapClass.from_string(_require(entry, "class", where))
        bitmap = _from_image(os.path.join(mask_dir, _require(entry, "file", where)))
        if bitmap.shape != grid.shape:
            raise SchemaError(f"{where}: image shape {bitmap.shape} does not match grid {grid.shape}")
        confidence = _number(entry.get("confidence", 1.0), f"{where}.confidence")
        masks.append(InstanceMask(map_class, bitmap, confidence, frozenset(entry.get("flags", []))))
    return grid, (float(ego[0]), float(ego[1])), masks


def manifest_summary(masks: Sequence[InstanceMask]) -> Dict[str, int]:
    """Mask count per class, for status lines."""
    counts = {c.value: 0 for c in MapClass}
    for m in masks:
        counts[m.cls.value] += 1
    return counts
