"""
rasterizer.py - Vector annotations to per-instance binary masks.

Per-class strategies:
  - dividers: 8-connected Bresenham polylines, optionally thickened
  - ped crossings: even-odd scanline fill plus the drawn boundary
  - curbs: every curb is drawn into one graph; the 4-connected background
    domains that do not hold the ego vehicle become one mask each
    (connected-domain curb masks)
Also holds the sliding-window max dilation shared with the matcher.
"""

from dataclasses import dataclass
from enum import Enum
import logging
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy import ndimage
from shapely.geometry import LinearRing

from config.config import (
    DIVIDER_WIDTH_PX, LABEL_DILATION_RADIUS, LABEL_DILATION_SHAPE,
    CURB_MODE, CURB_MODES, EGO_POSITION,
)
from src.core_types import (
    GridSpec, InstanceMask, MapClass, Scene, VectorInstance,
    dedupe_points, signed_area, world_to_pixel, world_to_pixel_array,
)
from src.errors import (
    AmbiguousEgoError, ConfigError, GeometryError, InvalidInstanceError,
)

logger = logging.getLogger(__name__)

# Background is labelled 4-connected; drawn lines are 8-connected.
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


# ============================================================
# Config types
# ============================================================
class KernelShape(Enum):
    SQUARE = "square"
    DISK = "disk"


@dataclass(frozen=True)
class DilationSpec:
    radius: int = 0
    kernel_shape: KernelShape = KernelShape.SQUARE

    def __post_init__(self):
        if isinstance(self.kernel_shape, str):
            try:
                object.__setattr__(self, "kernel_shape", KernelShape(self.kernel_shape.lower()))
            except ValueError:
                raise ConfigError(f"unknown kernel shape '{self.kernel_shape}'")
        if int(self.radius) != self.radius or self.radius < 0:
            raise ConfigError(f"dilation radius must be an integer >= 0, got {self.radius}")
        object.__setattr__(self, "radius", int(self.radius))

    def footprint(self) -> np.ndarray:
        r = self.radius
        if self.kernel_shape is KernelShape.SQUARE:
            return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        return disk_footprint(r)


@dataclass(frozen=True)
class RasterConfig:
    divider_width_px: int = DIVIDER_WIDTH_PX
    curb_mode: str = CURB_MODE
    label_dilation_radius: int = LABEL_DILATION_RADIUS
    label_dilation_shape: str = LABEL_DILATION_SHAPE

    def __post_init__(self):
        if int(self.divider_width_px) != self.divider_width_px or self.divider_width_px < 1:
            raise ConfigError(f"divider_width_px must be an integer >= 1, got {self.divider_width_px}")
        if self.curb_mode not in CURB_MODES:
            raise ConfigError(f"curb_mode must be one of {CURB_MODES}, got '{self.curb_mode}'")
        DilationSpec(self.label_dilation_radius, self.label_dilation_shape)

    @property
    def label_dilation(self) -> DilationSpec:
        return DilationSpec(self.label_dilation_radius, self.label_dilation_shape)


@dataclass(frozen=True)
class LabelGrid:
    """Background component labels: 0 = drawn foreground, 1..count = domains."""

    labels: np.ndarray
    count: int

    def component(self, k: int) -> np.ndarray:
        return self.labels == k


# ============================================================
# Primitives
# ============================================================
def disk_footprint(radius: float) -> np.ndarray:
    """Offsets with dx^2 + dy^2 <= radius^2."""
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx ** 2 + yy ** 2) <= radius ** 2 + 1e-9


def bresenham(r0: int, c0: int, r1: int, c1: int) -> Tuple[np.ndarray, np.ndarray]:
    """8-connected integer line from (r0, c0) to (r1, c1), both ends included."""
    dc = abs(c1 - c0)
    dr = -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    rows, cols = [], []
    r, c = r0, c0
    while True:
        rows.append(r)
        cols.append(c)
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c += sc
        if e2 <= dc:
            err += dc
            r += sr
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


def _draw_pixel_chain(canvas: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> None:
    canvas[rows[0], cols[0]] = 1
    for i in range(len(rows) - 1):
        rr, cc = bresenham(int(rows[i]), int(cols[i]), int(rows[i + 1]), int(cols[i + 1]))
        canvas[rr, cc] = 1


def _as_points(points) -> np.ndarray:
    if isinstance(points, VectorInstance):
        points = points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


# ============================================================
# Polylines and polygons
# ============================================================
def rasterize_polyline(points, grid: GridSpec, width_px: int = DIVIDER_WIDTH_PX,
                       map_class: MapClass = MapClass.DIVIDER,
                       confidence: float = 1.0) -> InstanceMask:
    """
    Draw consecutive point pairs as 8-connected Bresenham segments.

    ``width_px > 1`` thickens the 1-px line with a disk of radius
    ``(width_px - 1) / 2``. A polyline whose points all land in one pixel
    yields that single pixel with the ``degenerate`` flag.
    """
    pts = _as_points(points)
    if len(pts) < 2:
        raise InvalidInstanceError(f"a polyline needs at least 2 points, got {len(pts)}")
    if width_px < 1:
        raise InvalidInstanceError(f"width_px must be >= 1, got {width_px}")

    rows, cols, _ = world_to_pixel_array(pts, grid)
    canvas = np.zeros(grid.shape, dtype=np.uint8)
    flags = set()
    if np.all(rows == rows[0]) and np.all(cols == cols[0]):
        logger.warning("degenerate %s polyline collapses to pixel (%d, %d)",
                       map_class.value, rows[0], cols[0])
        flags.add("degenerate")
    _draw_pixel_chain(canvas, rows, cols)

    if width_px > 1:
        canvas = ndimage.binary_dilation(
            canvas.astype(bool), structure=disk_footprint((width_px - 1) / 2.0)
        ).astype(np.uint8)
    return InstanceMask(map_class, canvas, confidence, frozenset(flags))


def _scanline_fill(ring: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Even-odd fill of cell centers; edges use the half-open rule in y."""
    filled = np.zeros(grid.shape, dtype=np.uint8)
    res = grid.resolution
    x0, y0 = ring[:, 0], ring[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

    r_lo = max(int(np.floor((y0.min() - grid.y_min) / res - 0.5)), 0)
    r_hi = min(int(np.ceil((y0.max() - grid.y_min) / res - 0.5)), grid.height - 1)
    for r in range(r_lo, r_hi + 1):
        yc = grid.y_min + (r + 0.5) * res
        crosses = ((y0 <= yc) & (y1 > yc)) | ((y1 <= yc) & (y0 > yc))
        if not np.any(crosses):
            continue
        t = (yc - y0[crosses]) / (y1[crosses] - y0[crosses])
        xs = np.sort(x0[crosses] + t * (x1[crosses] - x0[crosses]))
        for xa, xb in zip(xs[0::2], xs[1::2]):
            c_lo = max(int(np.ceil((xa - grid.x_min) / res - 0.5)), 0)
            c_hi = min(int(np.floor((xb - grid.x_min) / res - 0.5)), grid.width - 1)
            if c_hi >= c_lo:
                filled[r, c_lo:c_hi + 1] = 1
    return filled


def rasterize_polygon(points, grid: GridSpec, map_class: MapClass = MapClass.PED_CROSSING,
                      confidence: float = 1.0) -> InstanceMask:
    """
    Fill a closed ring: every cell whose center is inside by the even-odd
    rule, plus the Bresenham-drawn boundary. Zero-area rings give a
    boundary-only mask flagged ``collapsed``.
    """
    ring = dedupe_points(_as_points(points), closed=True)
    if len(ring) < 3:
        raise InvalidInstanceError(f"a polygon needs at least 3 distinct points, got {len(ring)}")

    rows, cols, _ = world_to_pixel_array(ring, grid)
    boundary = np.zeros(grid.shape, dtype=np.uint8)
    _draw_pixel_chain(boundary, np.append(rows, rows[0]), np.append(cols, cols[0]))

    if abs(signed_area(ring)) == 0.0:
        logger.warning("collapsed %s ring has zero area; keeping boundary pixels only",
                       map_class.value)
        return InstanceMask(map_class, boundary, confidence, frozenset({"collapsed"}))
    if not LinearRing(ring).is_simple:
        raise GeometryError(f"{map_class.value} ring is self-intersecting")

    mask = np.maximum(_scanline_fill(ring, grid), boundary)
    return InstanceMask(map_class, mask, confidence)


# ============================================================
# Curbs: connected domains
# ============================================================
def connected_domains(binary: np.ndarray) -> LabelGrid:
    """Label background (0) cells into 4-connected components 1..K."""
    background = np.asarray(binary) == 0
    labels, count = ndimage.label(background, structure=FOUR_CONNECTED)
    return LabelGrid(labels.astype(np.int32), int(count))


def draw_curbs(curbs: Iterable[VectorInstance], grid: GridSpec) -> np.ndarray:
    """All curb polylines drawn 1 px wide into one uint8 graph."""
    graph = np.zeros(grid.shape, dtype=np.uint8)
    for curb in curbs:
        pts = curb.points if not curb.closed else np.vstack([curb.points, curb.points[:1]])
        rows, cols, _ = world_to_pixel_array(pts, grid)
        _draw_pixel_chain(graph, rows, cols)
    return graph


def gen_curb_masks(curbs: Sequence[VectorInstance], grid: GridSpec,
                   ego: Sequence[float] = EGO_POSITION) -> List[InstanceMask]:
    """
    One filled mask per background domain that does not contain the ego pixel.

    Curb pixels themselves are walls and belong to no mask. Masks come back
    in label order, which is the raster scan order of each domain's first cell.
    """
    curbs = list(curbs)
    if not curbs:
        return []
    for curb in curbs:
        if curb.cls is not MapClass.CURB:
            raise InvalidInstanceError(f"gen_curb_masks got a {curb.cls.value} instance")

    graph = draw_curbs(curbs, grid)
    ego_px = world_to_pixel(ego, grid)
    if graph[ego_px.row, ego_px.col]:
        raise AmbiguousEgoError(
            f"ego pixel (row {ego_px.row}, col {ego_px.col}) lies on a drawn curb"
        )

    domains = connected_domains(graph)
    ego_label = domains.labels[ego_px.row, ego_px.col]
    return [
        InstanceMask(MapClass.CURB, domains.component(k).astype(np.uint8), 1.0)
        for k in range(1, domains.count + 1)
        if k != ego_label
    ]


# ============================================================
# Dilation
# ============================================================
def dilate_array(bitmap: np.ndarray, spec: DilationSpec) -> np.ndarray:
    """Sliding-window max over the kernel; zero padding at the borders."""
    if spec.radius == 0:
        return np.asarray(bitmap)
    return ndimage.maximum_filter(np.asarray(bitmap), footprint=spec.footprint(),
                                  mode="constant", cval=0)


def dilate(mask: InstanceMask, spec: DilationSpec) -> InstanceMask:
    if spec.radius == 0:
        return mask
    return mask.with_bitmap(dilate_array(mask.bitmap, spec))


# ============================================================
# Scene
# ============================================================
def rasterize_scene(scene: Scene, width_px: int = DIVIDER_WIDTH_PX,
                    dilation_for_labels: DilationSpec = DilationSpec(),
                    curb_mode: str = CURB_MODE) -> List[InstanceMask]:
    """
    Ground-truth masks for a scene.

    Non-curb instances come first in file order, followed by the curb masks
    (one per domain in ``polygon`` mode, one per curb in ``polyline`` mode).
    """
    if curb_mode not in CURB_MODES:
        raise ConfigError(f"curb_mode must be one of {CURB_MODES}, got '{curb_mode}'")

    masks: List[InstanceMask] = []
    curbs: List[VectorInstance] = []
    for inst in scene.gt_vectors:
        if inst.cls is MapClass.CURB:
            curbs.append(inst)
        elif inst.cls is MapClass.PED_CROSSING:
            masks.append(rasterize_polygon(inst.points, scene.grid, inst.cls, inst.confidence))
        else:
            pts = inst.points if not inst.closed else np.vstack([inst.points, inst.points[:1]])
            masks.append(rasterize_polyline(pts, scene.grid, width_px, inst.cls, inst.confidence))

    if curb_mode == "polygon":
        masks.extend(gen_curb_masks(curbs, scene.grid, scene.ego))
    else:
        for curb in curbs:
            masks.append(rasterize_polyline(curb.points, scene.grid, width_px, MapClass.CURB,
                                            curb.confidence))

    return [dilate(m, dilation_for_labels) for m in masks]


def rasterize_with_config(scene: Scene, cfg: RasterConfig) -> List[InstanceMask]:
    return rasterize_scene(scene, cfg.divider_width_px, cfg.label_dilation, cfg.curb_mode)
