"""
core_types.py - Shared domain types and BEV coordinate transforms.

World frame: meters, x to the right, y forward, ego at (0, 0) by default.
Pixel frame: integer (row, col) with col = floor((x - x_min) / res) and
row = floor((y - y_min) / res), so rows grow with y. Pixel (r, c) covers the
cell [x_min + c*res, x_min + (c+1)*res) x [y_min + r*res, y_min + (r+1)*res)
and its cell center is the world representative.

The tracer works on the pixel-corner lattice: corner (X, Y) sits at world
(x_min + X*res, y_min + Y*res).
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import LineString, Polygon, box

from config.config import (
    GRID_X_MIN, GRID_X_MAX, GRID_Y_MIN, GRID_Y_MAX, GRID_RESOLUTION,
    EGO_POSITION,
)
from src.errors import (
    DimensionMismatchError, GeometryError, InvalidInstanceError, UnknownClassError,
)

logger = logging.getLogger(__name__)

# floor() guard so that values like 204.99999999999997 land on 205
_FLOOR_EPS = 1e-9


# ============================================================
# Map classes
# ============================================================
class MapClass(Enum):
    DIVIDER = "divider"
    PED_CROSSING = "ped_crossing"
    CURB = "curb"

    @property
    def index(self) -> int:
        """Position in class-probability vectors."""
        return _CLASS_ORDER.index(self)

    @property
    def is_closed_shape(self) -> bool:
        return self is MapClass.PED_CROSSING

    @classmethod
    def from_string(cls, name: str) -> "MapClass":
        key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
        if key in _CLASS_ALIASES:
            return _CLASS_ALIASES[key]
        raise UnknownClassError(f"unknown map class '{name}'")


_CLASS_ORDER = [MapClass.DIVIDER, MapClass.PED_CROSSING, MapClass.CURB]
MAP_CLASSES: Tuple[MapClass, ...] = tuple(_CLASS_ORDER)

_CLASS_ALIASES = {
    "divider": MapClass.DIVIDER,
    "lane": MapClass.DIVIDER,
    "lane_divider": MapClass.DIVIDER,
    "ped_crossing": MapClass.PED_CROSSING,
    "pedcross": MapClass.PED_CROSSING,
    "ped_cross": MapClass.PED_CROSSING,
    "crosswalk": MapClass.PED_CROSSING,
    "curb": MapClass.CURB,
    "road_boundary": MapClass.CURB,
}


# ============================================================
# Grid
# ============================================================
@dataclass(frozen=True)
class GridSpec:
    """BEV extent in meters plus resolution; the world<->pixel contract."""

    x_min: float = GRID_X_MIN
    x_max: float = GRID_X_MAX
    y_min: float = GRID_Y_MIN
    y_max: float = GRID_Y_MAX
    resolution: float = GRID_RESOLUTION

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise GeometryError(
                f"grid extent is empty: x[{self.x_min}, {self.x_max}] y[{self.y_min}, {self.y_max}]"
            )
        if not self.resolution > 0:
            raise GeometryError(f"grid resolution must be positive, got {self.resolution}")
        if self.width < 1 or self.height < 1:
            raise GeometryError("grid has no pixels at this resolution")

    @property
    def width(self) -> int:
        return int(round((self.x_max - self.x_min) / self.resolution))

    @property
    def height(self) -> int:
        return int(round((self.y_max - self.y_min) / self.resolution))

    @property
    def shape(self) -> Tuple[int, int]:
        """numpy shape of a bitmap on this grid: (rows, cols)."""
        return (self.height, self.width)

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "resolution": self.resolution,
        }


class PixelIndex(NamedTuple):
    row: int
    col: int
    inside: bool


def world_to_pixel(p: Sequence[float], grid: GridSpec) -> PixelIndex:
    """
    Map a world point to its pixel; out-of-extent points are clamped to the
    nearest border pixel and reported with ``inside=False``.
    """
    x, y = float(p[0]), float(p[1])
    col = math.floor((x - grid.x_min) / grid.resolution + _FLOOR_EPS)
    row = math.floor((y - grid.y_min) / grid.resolution + _FLOOR_EPS)
    col = min(max(col, 0), grid.width - 1)
    row = min(max(row, 0), grid.height - 1)
    return PixelIndex(row, col, grid.contains(x, y))


def world_to_pixel_array(points: np.ndarray, grid: GridSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised world_to_pixel: returns (rows, cols, inside) arrays."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    cols = np.floor((pts[:, 0] - grid.x_min) / grid.resolution + _FLOOR_EPS).astype(np.int64)
    rows = np.floor((pts[:, 1] - grid.y_min) / grid.resolution + _FLOOR_EPS).astype(np.int64)
    inside = (
        (pts[:, 0] >= grid.x_min) & (pts[:, 0] <= grid.x_max)
        & (pts[:, 1] >= grid.y_min) & (pts[:, 1] <= grid.y_max)
    )
    cols = np.clip(cols, 0, grid.width - 1)
    rows = np.clip(rows, 0, grid.height - 1)
    return rows, cols, inside


def pixel_to_world(row: int, col: int, grid: GridSpec) -> Tuple[float, float]:
    """Cell center of pixel (row, col) in meters."""
    return (
        grid.x_min + (col + 0.5) * grid.resolution,
        grid.y_min + (row + 0.5) * grid.resolution,
    )


def corners_to_world(corners: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Lattice corner coordinates (X=col, Y=row) to meters."""
    c = np.asarray(corners, dtype=np.float64).reshape(-1, 2)
    return np.column_stack([
        grid.x_min + c[:, 0] * grid.resolution,
        grid.y_min + c[:, 1] * grid.resolution,
    ])


def world_to_corners(points: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Meters to continuous lattice corner coordinates (X=col, Y=row)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return np.column_stack([
        (p[:, 0] - grid.x_min) / grid.resolution,
        (p[:, 1] - grid.y_min) / grid.resolution,
    ])


# ============================================================
# Vector instances
# ============================================================
def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def dedupe_points(points: np.ndarray, closed: bool = False) -> np.ndarray:
    """Drop consecutive duplicate points (and a closing duplicate for rings)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return pts
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    pts = pts[keep]
    if closed:
        while len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
            pts = pts[:-1]
    return pts


def signed_area(points: np.ndarray) -> float:
    """Shoelace area of a ring; positive when counterclockwise."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True, eq=False)
class VectorInstance:
    """A classed, ordered point sequence in meters (open polyline or closed ring)."""

    cls: MapClass
    points: np.ndarray
    closed: bool = False
    confidence: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidInstanceError(f"points must be an (N, 2) array, got shape {pts.shape}")
        if len(pts) < 2:
            raise InvalidInstanceError(f"an instance needs at least 2 points, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInstanceError("instance points must be finite")
        if np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise InvalidInstanceError("instance has identical consecutive points")
        if self.closed and np.array_equal(pts[0], pts[-1]):
            raise InvalidInstanceError("closed ring must not repeat its first point")
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise InvalidInstanceError(f"confidence must lie in [0, 1], got {self.confidence}")
        object.__setattr__(self, "points", _frozen_array(pts))
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "closed", bool(self.closed))

    @classmethod
    def from_points(cls, map_class: MapClass, points, closed: bool = False,
                    confidence: float = 1.0) -> "VectorInstance":
        """Build an instance after removing consecutive duplicates."""
        return cls(map_class, dedupe_points(points, closed), closed, confidence)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        pts = self.points
        if self.closed:
            pts = np.vstack([pts, pts[:1]])
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def reversed(self) -> "VectorInstance":
        return VectorInstance(self.cls, self.points[::-1], self.closed, self.confidence)

    def with_points(self, points) -> "VectorInstance":
        return VectorInstance(self.cls, points, self.closed, self.confidence)

    def same_shape(self, other: "VectorInstance", atol: float = 0.0) -> bool:
        """Equivalence up to reversal (open) or rotation/orientation (closed)."""
        if self.cls is not other.cls or self.closed != other.closed or len(self) != len(other):
            return False
        a = canonicalize(self).points
        b = canonicalize(other).points
        return bool(np.allclose(a, b, rtol=0.0, atol=atol))


def _lex_key(points: np.ndarray) -> Tuple[float, ...]:
    return tuple(points.reshape(-1).tolist())


def _best_rotation(points: np.ndarray) -> np.ndarray:
    """Rotation of a ring whose flattened coordinates are lexicographically smallest."""
    n = len(points)
    first = min(range(n), key=lambda i: (points[i, 0], points[i, 1]))
    candidates = [i for i in range(n) if np.array_equal(points[i], points[first])]
    rotations = [np.roll(points, -i, axis=0) for i in candidates]
    return min(rotations, key=_lex_key)


def canonicalize(v: VectorInstance) -> VectorInstance:
    """
    Canonical representative of an instance's equivalence class.

    Open instances: the lexicographically smaller of the forward and reversed
    point lists. Closed instances: counterclockwise orientation, rotated so the
    lexicographically smallest vertex comes first. Zero-area rings have no
    orientation, so both directions are tried.
    """
    if len(v.points) < 2:
        raise InvalidInstanceError("cannot canonicalize an instance with fewer than 2 points")
    pts = np.asarray(v.points)
    if not v.closed:
        rev = pts[::-1]
        best = pts if _lex_key(pts) <= _lex_key(rev) else rev
        return VectorInstance(v.cls, best, False, v.confidence)

    area = signed_area(pts)
    if area > 0:
        best = _best_rotation(pts)
    elif area < 0:
        best = _best_rotation(pts[::-1])
    else:
        best = min(_best_rotation(pts), _best_rotation(pts[::-1]), key=_lex_key)
    return VectorInstance(v.cls, best, True, v.confidence)


# ============================================================
# Masks
# ============================================================
@dataclass(frozen=True, eq=False)
class InstanceMask:
    """
    A classed bitmap on the grid. Ground truth is binary with confidence 1.0;
    predictions may carry probabilities. ``flags`` records non-fatal
    conditions raised while producing the mask (e.g. "degenerate").
    """

    cls: MapClass
    bitmap: np.ndarray
    confidence: float = 1.0
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        bm = np.asarray(self.bitmap)
        if bm.ndim != 2:
            raise DimensionMismatchError(f"mask bitmap must be 2-D, got shape {bm.shape}")
        if bm.dtype == np.bool_:
            bm = bm.astype(np.uint8)
        if bm.size and (bm.min() < 0 or bm.max() > 1):
            raise InvalidInstanceError("mask values must lie in [0, 1]")
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise InvalidInstanceError(f"confidence must lie in [0, 1], got {self.confidence}")
        object.__setattr__(self, "bitmap", _frozen_array(bm, dtype=bm.dtype))
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bitmap.shape

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.bitmap == 0) | (self.bitmap == 1)))

    def binary(self) -> np.ndarray:
        """Bitmap binarized at 0.5 as a bool array."""
        return np.asarray(self.bitmap) >= 0.5

    @property
    def area(self) -> int:
        return int(self.binary().sum())

    def with_bitmap(self, bitmap: np.ndarray) -> "InstanceMask":
        return InstanceMask(self.cls, bitmap, self.confidence, self.flags)

    def check_grid(self, grid: GridSpec) -> None:
        if self.shape != grid.shape:
            raise DimensionMismatchError(
                f"mask shape {self.shape} does not match grid shape {grid.shape}"
            )


def check_same_shape(a: InstanceMask, b: InstanceMask) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")


# ============================================================
# Scene
# ============================================================
@dataclass(frozen=True, eq=False)
class Scene:
    """Grid, ground-truth vectors (clipped to the extent) and ego position."""

    grid: GridSpec
    gt_vectors: Tuple[VectorInstance, ...] = ()
    ego: Tuple[float, float] = EGO_POSITION

    def __post_init__(self):
        object.__setattr__(self, "gt_vectors", tuple(self.gt_vectors))
        object.__setattr__(self, "ego", (float(self.ego[0]), float(self.ego[1])))

    @classmethod
    def create(cls, grid: GridSpec, instances: Iterable[VectorInstance],
               ego: Sequence[float] = EGO_POSITION) -> "Scene":
        """Build a scene, clipping every instance to the grid extent."""
        clipped: List[VectorInstance] = []
        for inst in instances:
            clipped.extend(clip_to_extent(inst, grid))
        return cls(grid, tuple(clipped), (float(ego[0]), float(ego[1])))

    def by_class(self, map_class: MapClass) -> List[VectorInstance]:
        return [v for v in self.gt_vectors if v.cls is map_class]


def clip_to_extent(inst: VectorInstance, grid: GridSpec) -> List[VectorInstance]:
    """
    Clip an instance to the grid extent. Instances fully inside come back
    unchanged; a polyline leaving and re-entering the extent is split.
    """
    pts = inst.points
    inside = (
        (pts[:, 0] >= grid.x_min) & (pts[:, 0] <= grid.x_max)
        & (pts[:, 1] >= grid.y_min) & (pts[:, 1] <= grid.y_max)
    )
    if np.all(inside):
        return [inst]

    extent = box(grid.x_min, grid.y_min, grid.x_max, grid.y_max)
    if inst.closed:
        poly = Polygon(pts)
        if not poly.is_valid:
            raise GeometryError("cannot clip a self-intersecting ring")
        geom = poly.intersection(extent)
        parts = [g for g in getattr(geom, "geoms", [geom]) if g.geom_type == "Polygon" and not g.is_empty]
        pieces = [np.asarray(g.exterior.coords)[:-1] for g in parts]
    else:
        geom = LineString(pts).intersection(extent)
        parts = [g for g in getattr(geom, "geoms", [geom]) if g.geom_type == "LineString" and not g.is_empty]
        pieces = [np.asarray(g.coords) for g in parts]

    out = []
    for piece in pieces:
        # shapely can land a hair outside the box on the boundary
        piece = np.column_stack([
            np.clip(piece[:, 0], grid.x_min, grid.x_max),
            np.clip(piece[:, 1], grid.y_min, grid.y_max),
        ])
        piece = dedupe_points(piece, inst.closed)
        if len(piece) >= (3 if inst.closed else 2):
            out.append(VectorInstance(inst.cls, piece, inst.closed, inst.confidence))
    if not out:
        logger.warning("%s instance lies outside the grid extent and was dropped", inst.cls.value)
    return out
