import logging

import numpy as np
import pytest

from src.core_types import (
    GridSpec, InstanceMask, MAP_CLASSES, MapClass, VectorInstance, world_to_pixel_array,
)
from src.errors import ConfigError
from src.postprocess import (
    PostprocessConfig, densify_ring, extract_centerline, longest_edge_midsegment, outward_normals,
    remove_image_edges, resample_by_count, simplify_chain, vectorize, vectorize_mask,
)
from src.rasterizer import DilationSpec, dilate, rasterize_polyline
from src.tracer import is_outer


def ring(cls, points):
    return VectorInstance(cls, np.asarray(points, dtype=float), closed=True)


def column_mask(cls, cols, shape=(10, 10), confidence=1.0):
    bm = np.zeros(shape, dtype=np.uint8)
    bm[:, cols[0]:cols[1]] = 1
    return InstanceMask(cls, bm, confidence)


# ============================================================
# Helpers
# ============================================================
def test_resample_by_count_is_even():
    pts = resample_by_count(np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 6.0]]), 11)
    assert len(pts) == 11
    np.testing.assert_allclose(pts[0], [0.0, 0.0])
    np.testing.assert_allclose(pts[-1], [4.0, 6.0])
    np.testing.assert_allclose(np.linalg.norm(np.diff(pts, axis=0), axis=1), 1.0)


def test_resample_degenerate_chain():
    pts = resample_by_count(np.array([[2.0, 3.0], [2.0, 3.0]]), 4)
    assert pts.shape == (4, 2)
    assert np.all(pts == [2.0, 3.0])


def test_simplify_keeps_endpoints():
    chain = np.array([[0.0, 0.0], [1.0, 0.01], [2.0, 0.0], [3.0, 2.0]])
    out = simplify_chain(chain, 0.1)
    np.testing.assert_allclose(out, [[0.0, 0.0], [2.0, 0.0], [3.0, 2.0]])
    np.testing.assert_allclose(simplify_chain(chain, 0.0), chain)


def test_densify_ring_spacing():
    dense = densify_ring(np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 3.0], [0.0, 3.0]]), step=1.0)
    assert len(dense) == 12
    closed = np.vstack([dense, dense[:1]])
    assert np.linalg.norm(np.diff(closed, axis=0), axis=1).max() <= 1.0 + 1e-12


# ============================================================
# Centerlines
# ============================================================
def test_centerline_of_thin_rectangle():
    outline = ring(MapClass.DIVIDER, [[0, 0], [20, 0], [20, 1], [0, 1]])
    line = extract_centerline(outline)
    assert not line.closed
    assert line.cls is MapClass.DIVIDER
    assert np.all((line.points[:, 1] >= 0.0) & (line.points[:, 1] <= 1.0))
    assert np.ptp(line.points[:, 0]) >= 19.0
    assert line.length == pytest.approx(20.0, abs=1.0)


def test_centerline_of_triangle_is_its_longest_edge_midsegment(caplog):
    with caplog.at_level(logging.WARNING, logger="src.postprocess"):
        line = extract_centerline(ring(MapClass.DIVIDER, [[0, 0], [4, 0], [2, 1]]))
    np.testing.assert_allclose(line.points, [[1.0, 0.5], [3.0, 0.5]])
    assert not line.closed
    assert "midsegment" in caplog.text


def test_centerline_of_two_point_ring_is_the_edge():
    two = VectorInstance(MapClass.DIVIDER, np.array([[1.0, 2.0], [5.0, 2.0]]), closed=True, confidence=0.8)
    line = extract_centerline(two)
    np.testing.assert_allclose(line.points, [[1.0, 2.0], [5.0, 2.0]])
    assert line.confidence == 0.8 and not line.closed


def test_midsegment_follows_the_longest_edge_wherever_it_starts():
    tri = np.array([[2.0, 1.0], [0.0, 0.0], [4.0, 0.0]])
    np.testing.assert_allclose(longest_edge_midsegment(tri), [[1.0, 0.5], [3.0, 0.5]])


def test_divider_mask_collapses_to_its_column(unit_grid):
    (line,) = vectorize_mask(column_mask(MapClass.DIVIDER, (4, 5), confidence=0.9), unit_grid)
    assert not line.closed and line.confidence == 0.9
    assert np.all((line.points[:, 0] >= 4.0) & (line.points[:, 0] <= 5.0))
    assert np.ptp(line.points[:, 1]) >= 9.0


# ============================================================
# Curbs
# ============================================================
def test_remove_image_edges_keeps_interior_side(unit_grid):
    domain = ring(MapClass.CURB, [[0, 0], [2, 0], [2, 10], [0, 10]])
    (curb,) = remove_image_edges(domain, unit_grid)
    np.testing.assert_allclose(curb.points, [[2.5, 1.0], [2.5, 9.0]])
    assert not curb.closed


def test_zero_wall_offset_keeps_the_domain_edge(unit_grid):
    domain = ring(MapClass.CURB, [[0, 0], [2, 0], [2, 10], [0, 10]])
    (curb,) = remove_image_edges(domain, unit_grid, PostprocessConfig(curb_wall_offset_px=0.0))
    np.testing.assert_allclose(curb.points, [[2.0, 1.0], [2.0, 9.0]])


def test_wall_offset_points_away_from_the_domain(unit_grid):
    # domain right of the wall: the run moves toward smaller x
    domain = ring(MapClass.CURB, [[6, 0], [10, 0], [10, 10], [6, 10]])
    (curb,) = remove_image_edges(domain, unit_grid)
    np.testing.assert_allclose(curb.points[:, 0], 5.5)
    # hole rings run clockwise and also move away from the domain
    hole = ring(MapClass.CURB, [[3, 3], [3, 7], [7, 7], [7, 3]])
    (loop,) = remove_image_edges(hole, unit_grid)
    assert np.all((loop.points >= 3.0) & (loop.points <= 7.0))
    assert np.any((loop.points > 3.0) & (loop.points < 7.0))


def test_outward_normals_of_a_square():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [2.0, 2.0],
                       [1.0, 2.0], [0.0, 2.0], [0.0, 1.0]])
    normals = outward_normals(square)
    np.testing.assert_allclose(normals[1], [0.0, -1.0])
    np.testing.assert_allclose(normals[3], [1.0, 0.0])
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)


def test_ring_on_the_border_is_dropped(unit_grid):
    full = ring(MapClass.CURB, [[0, 0], [10, 0], [10, 10], [0, 10]])
    assert remove_image_edges(full, unit_grid) == []


def test_edge_margin_zero_keeps_everything(unit_grid):
    domain = ring(MapClass.CURB, [[0, 0], [2, 0], [2, 10], [0, 10]])
    (loop,) = remove_image_edges(domain, unit_grid, PostprocessConfig(edge_margin_px=0.0))
    np.testing.assert_allclose(loop.points[0], loop.points[-1])
    # every side moves half a pixel outward; corners are cut along their bisector
    assert 24.0 < loop.length < 28.0


def test_curb_domain_mask_becomes_polyline(unit_grid):
    (curb,) = vectorize_mask(column_mask(MapClass.CURB, (0, 2)), unit_grid)
    np.testing.assert_allclose(sorted(curb.points[:, 1]), [1.0, 9.0], atol=1e-9)
    np.testing.assert_allclose(curb.points[:, 0], 2.5, atol=1e-9)


def test_polyline_curb_mode_uses_centerline(unit_grid):
    (curb,) = vectorize_mask(column_mask(MapClass.CURB, (4, 5)), unit_grid, curb_mode="polyline")
    assert np.all((curb.points[:, 0] >= 4.0) & (curb.points[:, 0] <= 5.0))


# ============================================================
# Ped crossings and gating
# ============================================================
def test_ped_crossing_keeps_outer_ring_only(unit_grid):
    bm = np.zeros((10, 10), dtype=np.uint8)
    bm[1:9, 1:9] = 1
    bm[4:6, 4:6] = 0
    polys = vectorize_mask(InstanceMask(MapClass.PED_CROSSING, bm), unit_grid)
    assert len(polys) == 1
    assert polys[0].closed and is_outer(polys[0])


def test_confidence_gate_is_strict(unit_grid):
    low = column_mask(MapClass.DIVIDER, (4, 5), confidence=0.5)
    high = column_mask(MapClass.DIVIDER, (4, 5), confidence=0.51)
    assert vectorize([low], unit_grid) == []
    assert len(vectorize([low, high], unit_grid)) == 1


def test_empty_mask_vectorizes_to_nothing(unit_grid):
    assert vectorize_mask(InstanceMask(MapClass.PED_CROSSING, np.zeros((10, 10))), unit_grid) == []


def test_centerlines_stay_inside_the_dilated_divider_mask(grid100):
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(30):
        start = rng.uniform(25.0, 75.0, 2)
        angle = rng.uniform(0.0, np.pi)
        length = rng.uniform(10.0, 25.0)
        end = np.clip(start + length * np.array([np.cos(angle), np.sin(angle)]), 5.0, 95.0)
        mask = rasterize_polyline(np.vstack([start, end]), grid100, 1, MapClass.DIVIDER)
        halo = dilate(mask, DilationSpec(1)).binary()
        for line in vectorize_mask(mask, grid100):
            rows, cols, _ = world_to_pixel_array(line.points, grid100)
            assert halo[rows, cols].all()
            checked += 1
    assert checked >= 30


def test_raising_the_threshold_never_adds_outputs(make_blobs):
    grid = GridSpec(0.0, 24.0, 0.0, 24.0, 1.0)
    rng = np.random.default_rng(12)
    masks = [
        InstanceMask(MAP_CLASSES[k % 3], bm, float(rng.uniform(0.0, 1.0)))
        for k, bm in enumerate(make_blobs(3, 12))
    ]
    counts = [len(vectorize(masks, grid, pp_cfg=PostprocessConfig(confidence_threshold=t)))
              for t in np.linspace(0.0, 1.0, 11)]
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] == 0


@pytest.mark.parametrize("kwargs", [
    {"confidence_threshold": 1.5},
    {"edge_margin_px": -1.0},
    {"centerline_samples": 1},
    {"simplify_eps_px": -0.1},
])
def test_invalid_postprocess_config(kwargs):
    with pytest.raises(ConfigError):
        PostprocessConfig(**kwargs)
