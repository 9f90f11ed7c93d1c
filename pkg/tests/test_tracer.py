import numpy as np
import pytest
from matplotlib.path import Path
from shapely.geometry import LinearRing, Point

from src.core_types import GridSpec, InstanceMask, MapClass, signed_area
from src.errors import ConfigError
from src.tracer import (
    PathSign, TraceConfig, TurnPolicy, decompose, is_outer, optimal_polygon, smooth, trace,
    trace_pixels,
)


# ============================================================
# Helpers
# ============================================================
def mask_of(bitmap, cls=MapClass.PED_CROSSING, confidence=1.0):
    return InstanceMask(cls, np.asarray(bitmap, dtype=np.uint8), confidence)


def even_odd_refill(paths, shape):
    """Toggle every cell to the right of each vertical lattice edge."""
    out = np.zeros(shape, dtype=np.uint8)
    for path in paths:
        pts = np.asarray(path.points)
        nxt = np.roll(pts, -1, axis=0)
        for (xa, ya), (xb, yb) in zip(pts, nxt):
            if xa == xb and ya != yb:
                lo, hi = min(ya, yb), max(ya, yb)
                out[lo:hi, xa:] ^= 1
    return out


def polygon_refill(polygons, shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    centers = np.column_stack([xx.ravel() + 0.5, yy.ravel() + 0.5])
    out = np.zeros(h * w, dtype=bool)
    for poly in polygons:
        out ^= Path(np.asarray(poly.points)).contains_points(centers)
    return out.reshape(shape)


def rectangle(h=12, w=14, rows=(3, 7), cols=(2, 10)):
    bm = np.zeros((h, w), dtype=np.uint8)
    bm[rows[0]:rows[1], cols[0]:cols[1]] = 1
    return bm


# ============================================================
# Decomposition
# ============================================================
def test_single_pixel_path():
    bm = np.zeros((6, 6), dtype=np.uint8)
    bm[2, 3] = 1
    (path,) = decompose(mask_of(bm), TraceConfig(turd_size=0))
    assert path.sign is PathSign.POSITIVE
    assert path.area == 1
    assert {tuple(p) for p in path.points} == {(3, 2), (4, 2), (4, 3), (3, 3)}
    assert signed_area(path.points) > 0


def test_turd_size_drops_small_paths():
    bm = np.zeros((6, 6), dtype=np.uint8)
    bm[2, 3] = 1
    assert decompose(mask_of(bm), TraceConfig(turd_size=2)) == []


def test_hole_is_negative_and_clockwise():
    bm = np.zeros((9, 9), dtype=np.uint8)
    bm[2:7, 2:7] = 1
    bm[4, 4] = 0
    paths = decompose(mask_of(bm), TraceConfig(turd_size=0))
    assert [p.sign for p in paths] == [PathSign.POSITIVE, PathSign.NEGATIVE]
    outer, hole = paths
    assert outer.area == 25 and hole.area == -1
    assert signed_area(outer.points) > 0
    assert signed_area(hole.points) < 0


def test_empty_mask_has_no_paths():
    assert decompose(mask_of(np.zeros((5, 5)))) == []


def test_full_mask_traces_the_border():
    (path,) = decompose(mask_of(np.ones((4, 7))))
    assert path.area == 28
    xs, ys = path.points[:, 0], path.points[:, 1]
    assert (xs.min(), xs.max(), ys.min(), ys.max()) == (0, 7, 0, 4)


def test_paths_carry_class_and_confidence():
    (path,) = decompose(mask_of(rectangle(), MapClass.CURB, 0.8))
    assert path.cls is MapClass.CURB and path.confidence == 0.8


def test_decomposition_is_lossless_on_random_blobs(make_blobs):
    for bm in make_blobs(7, 100):
        paths = decompose(mask_of(bm), TraceConfig(turd_size=0))
        assert np.array_equal(even_odd_refill(paths, bm.shape), bm)


@pytest.mark.parametrize("policy", list(TurnPolicy))
def test_every_turn_policy_is_lossless_on_noise(policy):
    rng = np.random.default_rng(13)
    bm = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    paths = decompose(mask_of(bm), TraceConfig(turn_policy=policy, turd_size=0))
    assert np.array_equal(even_odd_refill(paths, bm.shape), bm)


def test_diagonal_pixels_policy_dependent():
    bm = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    joined = decompose(mask_of(bm), TraceConfig(turn_policy="black", turd_size=0))
    split = decompose(mask_of(bm), TraceConfig(turn_policy="white", turd_size=0))
    assert len(joined) == 1 and joined[0].area == 2
    assert len(split) == 2


# ============================================================
# Optimal polygon
# ============================================================
def test_rectangle_polygon_has_four_exact_corners():
    (path,) = decompose(mask_of(rectangle()))
    poly = optimal_polygon(path)
    assert poly.closed and len(poly) == 4
    got = sorted(map(tuple, np.round(poly.points, 6)))
    assert got == [(2.0, 3.0), (2.0, 7.0), (10.0, 3.0), (10.0, 7.0)]
    assert signed_area(poly.points) == pytest.approx(32.0)


def test_polygon_stays_close_to_path(make_blobs):
    for bm in make_blobs(21, 40):
        for path in decompose(mask_of(bm), TraceConfig(turd_size=4)):
            ring = LinearRing(optimal_polygon(path).points)
            worst = max(ring.distance(Point(float(x), float(y))) for x, y in path.points)
            assert worst <= 1.5


def test_polygon_refill_iou_on_large_blobs(make_blobs):
    checked = 0
    for bm in make_blobs(5, 60):
        if bm.sum() < 50:
            continue
        refill = polygon_refill(trace_pixels(mask_of(bm), TraceConfig(turd_size=4)), bm.shape)
        truth = bm.astype(bool)
        iou = (refill & truth).sum() / (refill | truth).sum()
        assert iou >= 0.90
        checked += 1
    assert checked > 10


def test_hole_polygon_stays_clockwise():
    bm = np.zeros((14, 14), dtype=np.uint8)
    bm[1:13, 1:13] = 1
    bm[5:9, 5:9] = 0
    polys = trace_pixels(mask_of(bm))
    assert [is_outer(p) for p in polys] == [True, False]


# ============================================================
# Smoothing and metric output
# ============================================================
def test_large_square_keeps_its_corners():
    bm = np.zeros((14, 14), dtype=np.uint8)
    bm[2:12, 2:12] = 1
    cfg = TraceConfig(smooth=True)
    (poly,) = trace_pixels(mask_of(bm), TraceConfig())
    assert smooth(poly, cfg) is poly


def test_smoothing_densifies_round_shapes():
    yy, xx = np.mgrid[0:30, 0:30]
    bm = ((yy - 14.5) ** 2 + (xx - 14.5) ** 2 <= 100).astype(np.uint8)
    (poly,) = trace_pixels(mask_of(bm))
    (smoothed,) = trace_pixels(mask_of(bm), TraceConfig(smooth=True))
    assert len(smoothed) > len(poly)
    a, b = signed_area(poly.points), signed_area(smoothed.points)
    assert b > 0
    assert abs(a - b) / a < 0.05


def test_smooth_off_is_identity():
    (poly,) = trace_pixels(mask_of(rectangle()))
    assert smooth(poly, TraceConfig(smooth=False)) is poly


def test_trace_returns_meters():
    grid = GridSpec(-5.0, 5.0, -5.0, 5.0, 0.5)
    bm = np.zeros(grid.shape, dtype=np.uint8)
    bm[2:6, 4:10] = 1
    (poly,) = trace(mask_of(bm, MapClass.PED_CROSSING, 0.9), grid)
    np.testing.assert_allclose(poly.points[:, 0].min(), -3.0, atol=1e-9)
    np.testing.assert_allclose(poly.points[:, 0].max(), 0.0, atol=1e-9)
    np.testing.assert_allclose(poly.points[:, 1].min(), -4.0, atol=1e-9)
    np.testing.assert_allclose(poly.points[:, 1].max(), -2.0, atol=1e-9)
    assert poly.cls is MapClass.PED_CROSSING and poly.confidence == 0.9
    assert is_outer(poly)


@pytest.mark.parametrize("kwargs", [
    {"turn_policy": "zigzag"},
    {"turd_size": -1},
    {"corner_threshold": -0.5},
    {"flatness_tolerance_px": 0.0},
])
def test_invalid_trace_config(kwargs):
    with pytest.raises(ConfigError):
        TraceConfig(**kwargs)
