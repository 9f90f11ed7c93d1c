"""
tracer.py - Potrace-style conversion of binary masks into closed polygons.

Stages:
    decompose        boundary paths on the pixel-corner lattice (lossless,
                     with despeckling and turn-policy handling)
    optimal_polygon  minimum-segment polygon through the path, vertices
                     refined inside their unit squares
    smooth           optional corner analysis + Bezier fitting, flattened
                     back into a denser point polygon

Lattice convention: pixel (row, col) is the unit square
[col, col+1] x [row, row+1] in corner coordinates (X=col, Y=row). Rows grow
with world y, so orientation in corner space equals orientation in meters.
Outer (positive) paths run counterclockwise, holes clockwise.
"""

from dataclasses import dataclass
from enum import Enum
import logging
import math
from typing import List, Tuple

import numpy as np

from config.config import (
    TURN_POLICY, TURD_SIZE, TRACE_SMOOTH, CORNER_THRESHOLD, FLATNESS_TOLERANCE_PX,
)
from src.core_types import (
    GridSpec, InstanceMask, MapClass, VectorInstance, corners_to_world, signed_area,
)
from src.errors import ConfigError

logger = logging.getLogger(__name__)

_INFTY = 10000000
_MAX_SUBDIVISION_DEPTH = 16


# ============================================================
# Types
# ============================================================
class TurnPolicy(Enum):
    MINORITY = "minority"
    MAJORITY = "majority"
    LEFT = "left"
    RIGHT = "right"
    BLACK = "black"
    WHITE = "white"


class PathSign(Enum):
    POSITIVE = "+"
    NEGATIVE = "-"


@dataclass(frozen=True)
class TraceConfig:
    turn_policy: TurnPolicy = TurnPolicy(TURN_POLICY)
    turd_size: int = TURD_SIZE
    smooth: bool = TRACE_SMOOTH
    corner_threshold: float = CORNER_THRESHOLD
    flatness_tolerance_px: float = FLATNESS_TOLERANCE_PX

    def __post_init__(self):
        if isinstance(self.turn_policy, str):
            try:
                object.__setattr__(self, "turn_policy", TurnPolicy(self.turn_policy.lower()))
            except ValueError:
                raise ConfigError(f"unknown turn policy '{self.turn_policy}'")
        if int(self.turd_size) != self.turd_size or self.turd_size < 0:
            raise ConfigError(f"turd_size must be an integer >= 0, got {self.turd_size}")
        if self.corner_threshold < 0:
            raise ConfigError("corner_threshold must be >= 0")
        if not self.flatness_tolerance_px > 0:
            raise ConfigError("flatness_tolerance_px must be positive")
        object.__setattr__(self, "turd_size", int(self.turd_size))
        object.__setattr__(self, "smooth", bool(self.smooth))


@dataclass(frozen=True, eq=False)
class PixelPath:
    """
    Closed cycle of lattice corners (int array of (X, Y), first point not
    repeated). ``area`` is signed: positive for counterclockwise outer
    boundaries, negative for clockwise holes.
    """

    points: np.ndarray
    sign: PathSign
    area: int
    cls: MapClass = MapClass.DIVIDER
    confidence: float = 1.0

    def __len__(self) -> int:
        return len(self.points)


# ============================================================
# Path decomposition
# ============================================================
class _Bitmap:
    """Bounds-checked view: pixels outside the array read as 0."""

    def __init__(self, data: np.ndarray):
        self.data = data
        self.h, self.w = data.shape

    def get(self, x: int, y: int) -> bool:
        return 0 <= x < self.w and 0 <= y < self.h and bool(self.data[y, x])


def _majority(bm: _Bitmap, x: int, y: int) -> bool:
    for i in range(2, 5):
        ct = 0
        for a in range(-i + 1, i):
            ct += 1 if bm.get(x + a, y + i - 1) else -1
            ct += 1 if bm.get(x + i - 1, y + a - 1) else -1
            ct += 1 if bm.get(x + a - 1, y - i) else -1
            ct += 1 if bm.get(x - i, y + a) else -1
        if ct > 0:
            return True
        if ct < 0:
            return False
    return False


def _take_right_turn(policy: TurnPolicy, sign: PathSign, bm: _Bitmap, x: int, y: int) -> bool:
    if policy is TurnPolicy.RIGHT:
        return True
    if policy is TurnPolicy.LEFT:
        return False
    if policy is TurnPolicy.BLACK:
        return sign is PathSign.POSITIVE
    if policy is TurnPolicy.WHITE:
        return sign is PathSign.NEGATIVE
    if policy is TurnPolicy.MAJORITY:
        return _majority(bm, x, y)
    return not _majority(bm, x, y)


def _find_path(bm: _Bitmap, x0: int, y0: int, sign: PathSign,
               policy: TurnPolicy) -> Tuple[List[Tuple[int, int]], int]:
    """Walk the boundary starting at corner (x0, y0) heading down; region on the left."""
    x, y = x0, y0
    dirx, diry = 0, -1
    pts: List[Tuple[int, int]] = []
    area = 0
    while True:
        pts.append((x, y))
        x += dirx
        y += diry
        area += x * diry
        if x == x0 and y == y0:
            break
        c = bm.get(x + (dirx + diry - 1) // 2, y + (diry - dirx - 1) // 2)
        d = bm.get(x + (dirx - diry - 1) // 2, y + (diry + dirx - 1) // 2)
        if c and not d:
            if _take_right_turn(policy, sign, bm, x, y):
                dirx, diry = diry, -dirx
            else:
                dirx, diry = -diry, dirx
        elif c:
            dirx, diry = diry, -dirx
        elif not d:
            dirx, diry = -diry, dirx
    return pts, area


def _xor_path(data: np.ndarray, pts: List[Tuple[int, int]]) -> None:
    """Invert the path interior: flip row segments right of each vertical edge."""
    y1 = pts[-1][1]
    for x, y in pts:
        if y != y1:
            row = min(y, y1)
            data[row, x:] ^= 1
            y1 = y


def _find_next(data: np.ndarray, x: int, y: int):
    """Next set pixel scanning rows downward from (x, y), left to right."""
    while y >= 0:
        hits = np.flatnonzero(data[y, x:])
        if hits.size:
            return x + int(hits[0]), y
        x = 0
        y -= 1
    return None


def decompose(mask: InstanceMask, cfg: TraceConfig = TraceConfig()) -> List[PixelPath]:
    """
    Split the binarized mask into closed boundary paths.

    Start points are taken scanning rows from the highest row index down and
    columns left to right; each traced path has its interior inverted in a
    working copy, so outer boundaries and holes alternate naturally. The
    even-odd refill of all returned paths (turd_size 0) equals the mask.
    """
    original = _Bitmap(mask.binary())
    work_data = mask.binary().astype(np.uint8)
    work = _Bitmap(work_data)

    paths: List[PixelPath] = []
    cursor = _find_next(work_data, 0, work.h - 1)
    while cursor is not None:
        x, y = cursor
        sign = PathSign.POSITIVE if original.get(x, y) else PathSign.NEGATIVE
        pts, area = _find_path(work, x, y + 1, sign, cfg.turn_policy)
        _xor_path(work_data, pts)
        if area >= cfg.turd_size:
            arr = np.asarray(pts, dtype=np.int64)
            if sign is PathSign.NEGATIVE:
                arr = np.vstack([arr[:1], arr[:0:-1]])
                area = -area
            arr.setflags(write=False)
            paths.append(PixelPath(arr, sign, area, mask.cls, mask.confidence))
        cursor = _find_next(work_data, x, y)
    return paths


# ============================================================
# Optimal polygon
# ============================================================
def _cyclic(a: int, b: int, c: int) -> bool:
    """a <= b < c in cyclic order."""
    if a <= c:
        return a <= b < c
    return a <= b or b < c


def _sign(v: int) -> int:
    return (v > 0) - (v < 0)


def _xprod(ax, ay, bx, by):
    return ax * by - ay * bx


def _calc_sums(xs: List[int], ys: List[int]) -> List[Tuple[int, int, int, int, int]]:
    """Prefix sums of x, y, xy, x^2, y^2 relative to the first corner."""
    x0, y0 = xs[0], ys[0]
    sums = [(0, 0, 0, 0, 0)]
    sx = sy = sxy = sx2 = sy2 = 0
    for xv, yv in zip(xs, ys):
        x, y = xv - x0, yv - y0
        sx += x
        sy += y
        sxy += x * y
        sx2 += x * x
        sy2 += y * y
        sums.append((sx, sy, sxy, sx2, sy2))
    return sums


def _calc_lon(xs: List[int], ys: List[int]) -> List[int]:
    """For each i, the furthest index reachable from i by a straight subpath."""
    n = len(xs)
    nc = [0] * n
    pivk = [0] * n

    k = 0
    for i in range(n - 1, -1, -1):
        if xs[i] != xs[k] and ys[i] != ys[k]:
            k = i + 1
        nc[i] = k

    for i in range(n - 1, -1, -1):
        ct = [0, 0, 0, 0]
        i1 = (i + 1) % n
        ct[(3 + 3 * (xs[i1] - xs[i]) + (ys[i1] - ys[i])) // 2] += 1
        c0x = c0y = c1x = c1y = 0

        k = nc[i]
        k1 = i
        found = False
        while True:
            ct[(3 + 3 * _sign(xs[k] - xs[k1]) + _sign(ys[k] - ys[k1])) // 2] += 1
            if ct[0] and ct[1] and ct[2] and ct[3]:
                pivk[i] = k1
                found = True
                break

            curx, cury = xs[k] - xs[i], ys[k] - ys[i]
            if _xprod(c0x, c0y, curx, cury) < 0 or _xprod(c1x, c1y, curx, cury) > 0:
                break

            if abs(curx) > 1 or abs(cury) > 1:
                offx = curx + (1 if (cury >= 0 and (cury > 0 or curx < 0)) else -1)
                offy = cury + (1 if (curx <= 0 and (curx < 0 or cury < 0)) else -1)
                if _xprod(c0x, c0y, offx, offy) >= 0:
                    c0x, c0y = offx, offy
                offx = curx + (1 if (cury <= 0 and (cury < 0 or curx < 0)) else -1)
                offy = cury + (1 if (curx >= 0 and (curx > 0 or cury < 0)) else -1)
                if _xprod(c1x, c1y, offx, offy) <= 0:
                    c1x, c1y = offx, offy
            k1 = k
            k = nc[k1]
            if not _cyclic(k, i, k1):
                break

        if found:
            continue
        # last point along k1..k that still satisfies both constraints
        dkx, dky = _sign(xs[k] - xs[k1]), _sign(ys[k] - ys[k1])
        curx, cury = xs[k1] - xs[i], ys[k1] - ys[i]
        a = _xprod(c0x, c0y, curx, cury)
        b = _xprod(c0x, c0y, dkx, dky)
        c = _xprod(c1x, c1y, curx, cury)
        d = _xprod(c1x, c1y, dkx, dky)
        j = _INFTY
        if b < 0:
            j = a // -b
        if d > 0:
            j = min(j, -c // d)
        pivk[i] = (k1 + j) % n

    lon = [0] * n
    j = pivk[n - 1]
    lon[n - 1] = j
    for i in range(n - 2, -1, -1):
        if _cyclic(i + 1, pivk[i], j):
            j = pivk[i]
        lon[i] = j
    i = n - 1
    while _cyclic((i + 1) % n, j, lon[i]):
        lon[i] = j
        i -= 1
    return lon


def _penalty3(xs, ys, sums, i: int, j: int) -> float:
    """Deviation penalty of the segment i..j (j may wrap past n once)."""
    n = len(xs)
    r = 0
    if j >= n:
        j -= n
        r = 1
    hi, lo = sums[j + 1], sums[i]
    k = j + 1 - i
    if r:
        top = sums[n]
        x, y, xy, x2, y2 = (hi[t] - lo[t] + top[t] for t in range(5))
        k += n
    else:
        x, y, xy, x2, y2 = (hi[t] - lo[t] for t in range(5))

    px = (xs[i] + xs[j]) / 2.0 - xs[0]
    py = (ys[i] + ys[j]) / 2.0 - ys[0]
    ey = xs[j] - xs[i]
    ex = -(ys[j] - ys[i])

    a = (x2 - 2 * x * px) / k + px * px
    b = (xy - x * py - y * px) / k + px * py
    c = (y2 - 2 * y * py) / k + py * py
    return math.sqrt(max(ex * ex * a + 2 * ex * ey * b + ey * ey * c, 0.0))


def _best_polygon(xs, ys, sums, lon) -> List[int]:
    """Indices of the minimum-segment, minimum-penalty polygon vertices."""
    n = len(xs)
    clip0 = [0] * n
    clip1 = [0] * (n + 1)
    seg0 = [0] * (n + 1)
    seg1 = [0] * (n + 1)
    pen = [0.0] * (n + 1)
    prev = [0] * (n + 1)

    for i in range(n):
        c = (lon[(i - 1) % n] - 1) % n
        if c == i:
            c = (i + 1) % n
        clip0[i] = n if c < i else c

    j = 1
    for i in range(n):
        while j <= clip0[i]:
            clip1[j] = i
            j += 1

    i = 0
    j = 0
    while i < n:
        seg0[j] = i
        i = clip0[i]
        j += 1
    seg0[j] = n
    m = j

    i = n
    for j in range(m, 0, -1):
        seg1[j] = i
        i = clip1[i]
    seg1[0] = 0

    for j in range(1, m + 1):
        for i in range(seg1[j], seg0[j] + 1):
            best = -1.0
            for k in range(seg0[j - 1], clip1[i] - 1, -1):
                this_pen = _penalty3(xs, ys, sums, k, i) + pen[k]
                if best < 0 or this_pen < best:
                    prev[i] = k
                    best = this_pen
            pen[i] = best

    po = [0] * m
    i = n
    for j in range(m - 1, -1, -1):
        i = prev[i]
        po[j] = i
    return po


def _point_slope(sums, n: int, i: int, j: int):
    """Centroid and principal direction of the points i..j."""
    r = 0
    while j >= n:
        j -= n
        r += 1
    while i >= n:
        i -= n
        r -= 1
    while j < 0:
        j += n
        r -= 1
    while i < 0:
        i += n
        r += 1
    hi, lo, top = sums[j + 1], sums[i], sums[n]
    x, y, xy, x2, y2 = (float(hi[t] - lo[t] + r * top[t]) for t in range(5))
    k = j + 1 - i + r * n

    ctr = (x / k, y / k)
    a = (x2 - x * x / k) / k
    b = (xy - x * y / k) / k
    c = (y2 - y * y / k) / k
    lambda2 = (a + c + math.sqrt((a - c) * (a - c) + 4 * b * b)) / 2
    a -= lambda2
    c -= lambda2

    if abs(a) >= abs(c):
        length = math.sqrt(a * a + b * b)
        direction = (-b / length, a / length) if length != 0 else (0.0, 0.0)
    else:
        length = math.sqrt(c * c + b * b)
        direction = (-c / length, b / length) if length != 0 else (0.0, 0.0)
    return ctr, direction


def _quadform(q: np.ndarray, x: float, y: float) -> float:
    v = np.array([x, y, 1.0])
    return float(v @ q @ v)


def _adjust_vertices(xs, ys, sums, po) -> np.ndarray:
    """Place each vertex at the point of its unit square closest to both adjacent lines."""
    n = len(xs)
    m = len(po)
    x0, y0 = xs[0], ys[0]

    forms = []
    for i in range(m):
        j = po[(i + 1) % m]
        j = (j - po[i]) % n + po[i]
        ctr, direction = _point_slope(sums, n, po[i], j)
        d = direction[0] ** 2 + direction[1] ** 2
        if d == 0.0:
            forms.append(np.zeros((3, 3)))
        else:
            v = np.array([direction[1], -direction[0], 0.0])
            v[2] = -v[1] * ctr[1] - v[0] * ctr[0]
            forms.append(np.outer(v, v) / d)

    vertices = np.zeros((m, 2), dtype=np.float64)
    for i in range(m):
        sx, sy = xs[po[i]] - x0, ys[po[i]] - y0
        q = forms[(i - 1) % m] + forms[i]

        while True:
            det = q[0, 0] * q[1, 1] - q[0, 1] * q[1, 0]
            if det != 0.0:
                wx = (-q[0, 2] * q[1, 1] + q[1, 2] * q[0, 1]) / det
                wy = (q[0, 2] * q[1, 0] - q[1, 2] * q[0, 0]) / det
                break
            # parallel lines: add an orthogonal axis through the vertex
            if q[0, 0] > q[1, 1]:
                v = np.array([-q[0, 1], q[0, 0], 0.0])
            elif q[1, 1]:
                v = np.array([-q[1, 1], q[1, 0], 0.0])
            else:
                v = np.array([1.0, 0.0, 0.0])
            d = v[0] ** 2 + v[1] ** 2
            v[2] = -v[1] * sy - v[0] * sx
            q = q + np.outer(v, v) / d

        if abs(wx - sx) <= 0.5 and abs(wy - sy) <= 0.5:
            vertices[i] = (wx + x0, wy + y0)
            continue

        best = _quadform(q, sx, sy)
        bx, by = sx, sy
        if q[0, 0] != 0.0:
            for z in range(2):
                wy = sy - 0.5 + z
                wx = -(q[0, 1] * wy + q[0, 2]) / q[0, 0]
                cand = _quadform(q, wx, wy)
                if abs(wx - sx) <= 0.5 and cand < best:
                    best, bx, by = cand, wx, wy
        if q[1, 1] != 0.0:
            for z in range(2):
                wx = sx - 0.5 + z
                wy = -(q[1, 0] * wx + q[1, 2]) / q[1, 1]
                cand = _quadform(q, wx, wy)
                if abs(wy - sy) <= 0.5 and cand < best:
                    best, bx, by = cand, wx, wy
        for l in range(2):
            for k in range(2):
                wx, wy = sx - 0.5 + l, sy - 0.5 + k
                cand = _quadform(q, wx, wy)
                if cand < best:
                    best, bx, by = cand, wx, wy
        vertices[i] = (bx + x0, by + y0)
    return vertices


def optimal_polygon(path: PixelPath) -> VectorInstance:
    """
    Closed polygon (corner units) with the fewest segments such that every
    segment is a straight approximation of the path corners it replaces;
    ties go to the least squared deviation. Vertices are then moved within
    their unit squares toward the intersection of the fitted lines.
    """
    pts = np.asarray(path.points)
    if len(pts) < 4:
        logger.warning("path with %d corners is too short to optimise", len(pts))
        return VectorInstance.from_points(path.cls, pts.astype(np.float64), True, path.confidence)

    clockwise = path.area < 0
    if clockwise:
        pts = np.vstack([pts[:1], pts[:0:-1]])
    xs = [int(v) for v in pts[:, 0]]
    ys = [int(v) for v in pts[:, 1]]

    sums = _calc_sums(xs, ys)
    lon = _calc_lon(xs, ys)
    po = _best_polygon(xs, ys, sums, lon)
    vertices = _adjust_vertices(xs, ys, sums, po)

    if clockwise:
        vertices = vertices[::-1]
    return VectorInstance.from_points(path.cls, vertices, True, path.confidence)


# ============================================================
# Smoothing
# ============================================================
def _interval(t: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a + t * (b - a)


def _corner_alpha(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> float:
    """Potrace's alpha for vertex p1 between neighbours p0 and p2."""
    rx = -_sign_f(p2[1] - p0[1])
    ry = _sign_f(p2[0] - p0[0])
    denom = ry * (p2[0] - p0[0]) - rx * (p2[1] - p0[1])
    if denom == 0.0:
        return 4.0 / 3.0
    dd = abs(((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])) / denom)
    alpha = (1 - 1.0 / dd) if dd > 1 else 0.0
    return alpha / 0.75


def _sign_f(v: float) -> float:
    return float(int(v > 0) - int(v < 0))


def _flatten_cubic(p0, p1, p2, p3, tol: float, out: List[np.ndarray], depth: int = 0) -> None:
    """Append points of the cubic (excluding p0) until the hull is within tol of the chord."""
    chord = p3 - p0
    length = math.hypot(chord[0], chord[1])
    if length > 0:
        d1 = abs(chord[0] * (p1[1] - p0[1]) - chord[1] * (p1[0] - p0[0])) / length
        d2 = abs(chord[0] * (p2[1] - p0[1]) - chord[1] * (p2[0] - p0[0])) / length
    else:
        d1 = math.hypot(*(p1 - p0))
        d2 = math.hypot(*(p2 - p0))
    if max(d1, d2) <= tol or depth >= _MAX_SUBDIVISION_DEPTH:
        out.append(p3)
        return
    # de Casteljau split at t = 0.5
    p01, p12, p23 = (p0 + p1) / 2, (p1 + p2) / 2, (p2 + p3) / 2
    p012, p123 = (p01 + p12) / 2, (p12 + p23) / 2
    mid = (p012 + p123) / 2
    _flatten_cubic(p0, p01, p012, mid, tol, out, depth + 1)
    _flatten_cubic(mid, p123, p23, p3, tol, out, depth + 1)


def _drop_collinear(points: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    pts = list(points)
    changed = True
    while changed and len(pts) > 3:
        changed = False
        keep = []
        n = len(pts)
        for i in range(n):
            a, b, c = pts[i - 1], pts[i], pts[(i + 1) % n]
            cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
            dot = (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1])
            if abs(cross) <= eps and dot > 0:
                changed = True
                continue
            keep.append(b)
        if len(keep) < 3:
            break
        pts = keep
    return np.asarray(pts)


def smooth(poly: VectorInstance, cfg: TraceConfig = TraceConfig()) -> VectorInstance:
    """
    Corner analysis and Bezier fitting on a closed corner-unit polygon.

    Vertices whose alpha reaches ``corner_threshold`` stay sharp; the others
    become cubic Bezier arcs between edge midpoints, flattened at
    ``flatness_tolerance_px``. With ``cfg.smooth`` off, or when every
    vertex is a corner, the polygon comes back unchanged.
    """
    if not cfg.smooth or not poly.closed or len(poly) < 3:
        return poly
    v = np.asarray(poly.points, dtype=np.float64)
    m = len(v)

    alphas = [_corner_alpha(v[(j - 1) % m], v[j], v[(j + 1) % m]) for j in range(m)]
    if all(a >= cfg.corner_threshold for a in alphas):
        return poly

    mids = [_interval(0.5, v[j], v[(j + 1) % m]) for j in range(m)]
    out: List[np.ndarray] = []
    for j in range(m):
        start = mids[(j - 1) % m]
        if alphas[j] >= cfg.corner_threshold:
            out.append(v[j])
            out.append(mids[j])
            continue
        alpha = min(max(alphas[j], 0.55), 1.0)
        c1 = _interval(0.5 + 0.5 * alpha, v[(j - 1) % m], v[j])
        c2 = _interval(0.5 + 0.5 * alpha, v[(j + 1) % m], v[j])
        _flatten_cubic(start, c1, c2, mids[j], cfg.flatness_tolerance_px, out)

    dense = _drop_collinear(np.asarray(out))
    return VectorInstance.from_points(poly.cls, dense, True, poly.confidence)


# ============================================================
# Full trace
# ============================================================
def trace_pixels(mask: InstanceMask, cfg: TraceConfig = TraceConfig()) -> List[VectorInstance]:
    """Closed polygons in corner units, in decomposition order."""
    polygons = []
    for path in decompose(mask, cfg):
        poly = optimal_polygon(path)
        if cfg.smooth:
            poly = smooth(poly, cfg)
        polygons.append(poly)
    return polygons


def trace(mask: InstanceMask, grid: GridSpec, cfg: TraceConfig = TraceConfig()) -> List[VectorInstance]:
    """
    Closed polygons in meters carrying the mask's class and confidence.
    Outer boundaries are counterclockwise, holes clockwise.
    """
    mask.check_grid(grid)
    return [
        VectorInstance.from_points(poly.cls, corners_to_world(poly.points, grid), True, poly.confidence)
        for poly in trace_pixels(mask, cfg)
    ]


def is_outer(poly: VectorInstance) -> bool:
    return signed_area(poly.points) > 0
