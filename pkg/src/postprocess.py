"""
postprocess.py - Traced polygons to final map elements.

Per-class branches, after a confidence gate:
    ped crossings  outer traced rings returned as-is
    dividers       thin outline collapsed to its centerline
    curbs          ring points lying on the image border removed; the
                   remaining runs are the curb polylines
"""

from dataclasses import dataclass
import logging
import math
from typing import Iterable, List

import numpy as np
from scipy.spatial.distance import cdist
from shapely.geometry import LineString

from config.config import (
    CONFIDENCE_THRESHOLD, EDGE_MARGIN_PX, CURB_WALL_OFFSET_PX, CENTERLINE_SAMPLES, SIMPLIFY_EPS_PX,
    CURB_MODE,
)
from src.core_types import (
    GridSpec, InstanceMask, MapClass, VectorInstance, corners_to_world, world_to_corners,
)
from src.errors import ConfigError, InvalidInstanceError
from src.tracer import TraceConfig, is_outer, trace

logger = logging.getLogger(__name__)

# Tolerance (px) used only to drop the collinear points added by densifying.
_DENSIFY_SIMPLIFY_PX = 1e-3


@dataclass(frozen=True)
class PostprocessConfig:
    confidence_threshold: float = CONFIDENCE_THRESHOLD
    edge_margin_px: float = EDGE_MARGIN_PX
    curb_wall_offset_px: float = CURB_WALL_OFFSET_PX
    centerline_samples: int = CENTERLINE_SAMPLES
    simplify_eps_px: float = SIMPLIFY_EPS_PX

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigError("confidence_threshold must lie in [0, 1]")
        if self.edge_margin_px < 0 or self.simplify_eps_px < 0 or self.curb_wall_offset_px < 0:
            raise ConfigError("margins and tolerances must be >= 0")
        if int(self.centerline_samples) != self.centerline_samples or self.centerline_samples < 2:
            raise ConfigError("centerline_samples must be an integer >= 2")
        object.__setattr__(self, "centerline_samples", int(self.centerline_samples))


# ============================================================
# Helpers
# ============================================================
def resample_by_count(points: np.ndarray, n: int) -> np.ndarray:
    """n points evenly spaced by arc length along an open chain, ends included."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.repeat(pts[:1], n, axis=0)
    t = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(t, s, pts[:, 0]), np.interp(t, s, pts[:, 1])])


def simplify_chain(points: np.ndarray, tolerance: float) -> np.ndarray:
    """Douglas-Peucker on an open chain; endpoints are always kept."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3 or tolerance <= 0:
        return pts
    return np.asarray(LineString(pts).simplify(tolerance, preserve_topology=False).coords)


def densify_ring(points: np.ndarray, step: float = 1.0) -> np.ndarray:
    """Insert points on every ring edge so consecutive spacing is <= step."""
    pts = np.asarray(points, dtype=np.float64)
    nxt = np.roll(pts, -1, axis=0)
    out = []
    for a, b in zip(pts, nxt):
        k = max(int(math.ceil(np.linalg.norm(b - a) / step)), 1)
        t = np.arange(k)[:, None] / k
        out.append(a + t * (b - a))
    return np.vstack(out)


# ============================================================
# Branches
# ============================================================
def longest_edge_midsegment(points: np.ndarray) -> np.ndarray:
    """
    Segment parallel to the longest ring edge, halfway to the opposite vertex:
    the midpoints of the other two sides of a triangle. A two-point ring is
    its own edge.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        return pts[:2].copy()
    edges = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    k = int(np.argmax(edges))
    a, b, c = pts[k], pts[(k + 1) % 3], pts[(k + 2) % 3]
    return np.vstack([(a + c) / 2.0, (b + c) / 2.0])


def extract_centerline(ring: VectorInstance, cfg: PostprocessConfig = PostprocessConfig(),
                       resolution: float = 1.0) -> VectorInstance:
    """
    Collapse the closed outline of a thin region to an open centerline.

    The ring is densified to one point per pixel and split at its farthest
    point pair; both chains are resampled to ``centerline_samples`` points
    and averaged pointwise, then simplified with tolerance
    ``simplify_eps_px * resolution``.
    """
    if len(ring) < 4:
        logger.warning("%d-vertex ring is too short for a centerline; using its longest-edge midsegment",
                       len(ring))
        return VectorInstance.from_points(ring.cls, longest_edge_midsegment(ring.points), False,
                                          ring.confidence)

    pts = densify_ring(ring.points, step=resolution)
    dist = cdist(pts, pts)
    i, j = np.unravel_index(int(np.argmax(dist)), dist.shape)
    i, j = min(i, j), max(i, j)

    forward = pts[i:j + 1]
    backward = np.vstack([pts[j:], pts[:i + 1]])[::-1]
    a = resample_by_count(forward, cfg.centerline_samples)
    b = resample_by_count(backward, cfg.centerline_samples)
    center = simplify_chain((a + b) / 2.0, cfg.simplify_eps_px * resolution)
    return VectorInstance.from_points(ring.cls, center, False, ring.confidence)


def outward_normals(ring: np.ndarray) -> np.ndarray:
    """
    Unit normals pointing away from the traced region at every ring vertex.
    Traced regions lie on the left of the ring for outer boundaries and holes
    alike, so this is the right-hand normal of the central-difference tangent.
    """
    pts = np.asarray(ring, dtype=np.float64)
    tangent = np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)
    normals = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    norm = np.linalg.norm(normals, axis=1)
    norm[norm == 0.0] = 1.0
    return normals / norm[:, None]


def remove_image_edges(ring: VectorInstance, grid: GridSpec,
                       cfg: PostprocessConfig = PostprocessConfig()) -> List[VectorInstance]:
    """
    Drop ring points closer than ``edge_margin_px`` to a grid border and return
    the surviving runs as open polylines. Edges are densified to 1 px first,
    so long border-spanning edges keep their interior part.

    A domain ring runs along the edge of the curb pixels that bound it; every
    kept point is moved ``curb_wall_offset_px`` outward so the polylines lie on
    the curb pixel centres.
    """
    corners = densify_ring(world_to_corners(ring.points, grid), step=1.0)
    margin = cfg.edge_margin_px
    keep = (
        (corners[:, 0] >= margin) & (corners[:, 0] <= grid.width - margin)
        & (corners[:, 1] >= margin) & (corners[:, 1] <= grid.height - margin)
    )
    if not np.any(keep):
        logger.warning("%s ring lies entirely on the image border; nothing kept", ring.cls.value)
        return []
    moved = corners + cfg.curb_wall_offset_px * outward_normals(corners)

    if np.all(keep):
        runs = [np.vstack([moved, moved[:1]])]
    else:
        # rotate so the sequence starts on a removed point; runs then never wrap
        start = int(np.flatnonzero(~keep)[0])
        moved = np.roll(moved, -start, axis=0)
        keep = np.roll(keep, -start)
        runs = []
        current: List[np.ndarray] = []
        for point, flag in zip(moved, keep):
            if flag:
                current.append(point)
            elif current:
                runs.append(np.asarray(current))
                current = []
        if current:
            runs.append(np.asarray(current))

    out = []
    for run in runs:
        if len(run) < 2:
            continue
        run = simplify_chain(run, _DENSIFY_SIMPLIFY_PX)
        try:
            out.append(VectorInstance.from_points(
                ring.cls, corners_to_world(run, grid), False, ring.confidence
            ))
        except InvalidInstanceError:
            continue
    return out


# ============================================================
# Driver
# ============================================================
def vectorize_mask(mask: InstanceMask, grid: GridSpec, trace_cfg: TraceConfig = TraceConfig(),
                   pp_cfg: PostprocessConfig = PostprocessConfig(),
                   curb_mode: str = CURB_MODE) -> List[VectorInstance]:
    if mask.confidence <= pp_cfg.confidence_threshold:
        return []
    rings = trace(mask, grid, trace_cfg)
    if not rings:
        logger.info("%s mask traced to nothing", mask.cls.value)
        return []

    if mask.cls is MapClass.PED_CROSSING:
        return [r for r in rings if is_outer(r)]
    if mask.cls is MapClass.CURB and curb_mode == "polygon":
        out = []
        for ring in rings:
            out.extend(remove_image_edges(ring, grid, pp_cfg))
        return out
    return [extract_centerline(r, pp_cfg, grid.resolution) for r in rings if is_outer(r)]


def vectorize(masks: Iterable[InstanceMask], grid: GridSpec,
              trace_cfg: TraceConfig = TraceConfig(),
              pp_cfg: PostprocessConfig = PostprocessConfig(),
              curb_mode: str = CURB_MODE) -> List[VectorInstance]:
    """
    Confidence-gated trace plus per-class post-processing for every mask.
    Masks at or below the threshold are skipped before tracing.
    """
    out: List[VectorInstance] = []
    for mask in masks:
        out.extend(vectorize_mask(mask, grid, trace_cfg, pp_cfg, curb_mode))
    return out
