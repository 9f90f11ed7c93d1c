from itertools import permutations

import numpy as np
import pytest

from src.core_types import InstanceMask, MapClass
from src.errors import ConfigError, DimensionMismatchError, InvalidInstanceError, InvariantViolation
from src.matcher import (
    CostMatrix, CostWeights, MatcherConfig, Prediction, assign, ce_cost, classification_cost,
    cost_matrix, dice_cost, match, one_hot,
)
from src.rasterizer import DilationSpec, KernelShape, bresenham, dilate_array

NO_DILATION = DilationSpec(0)


def line_mask(col, rows=(10, 90), shape=(100, 100), cls=MapClass.DIVIDER):
    bm = np.zeros(shape, dtype=np.uint8)
    bm[rows[0]:rows[1], col] = 1
    return InstanceMask(cls, bm)


def as_prediction(mask, probs=None):
    return Prediction(mask, one_hot(mask.cls) if probs is None else probs)


@pytest.fixture
def parallel_and_crossing():
    """Ground-truth line L, a parallel prediction A 3 px away, a prediction B crossing L at about 60 degrees."""
    gt = line_mask(50)
    parallel = line_mask(53)
    rows, cols = bresenham(43, 38, 57, 62)
    crossing = np.zeros((100, 100), dtype=np.uint8)
    crossing[rows, cols] = 1
    return gt, parallel, InstanceMask(MapClass.DIVIDER, crossing)


# ============================================================
# Cost terms
# ============================================================
def test_ce_of_identical_masks_is_near_zero():
    m = line_mask(20)
    assert ce_cost(m, m, NO_DILATION) <= 1e-5


def test_ce_of_complement_hits_the_clamp():
    m = line_mask(20)
    inverse = m.with_bitmap(1 - m.bitmap)
    assert ce_cost(inverse, m, NO_DILATION) == pytest.approx(-np.log(1e-6), rel=1e-4)


def test_dice_identity_and_disjoint():
    a, b = line_mask(20), line_mask(60)
    assert dice_cost(a, a, NO_DILATION) == pytest.approx(0.0, abs=1e-12)
    assert dice_cost(a, b, NO_DILATION) == pytest.approx(1.0 - 1.0 / 161.0)


def test_dilation_turns_near_misses_into_overlap(parallel_and_crossing):
    gt, parallel, _ = parallel_and_crossing
    costs = [dice_cost(parallel, gt, DilationSpec(r)) for r in range(5)]
    assert costs[0] == pytest.approx(1.0, abs=0.01)
    assert costs[2] < 0.9
    assert costs[2] > costs[3] > costs[4]


def test_crossing_prediction_meets_the_line_at_sixty_degrees(parallel_and_crossing):
    gt, _, crossing = parallel_and_crossing
    rows, cols = np.nonzero(crossing.bitmap)
    angle = np.degrees(np.arctan2(np.ptp(cols), np.ptp(rows)))
    assert angle == pytest.approx(60.0, abs=1.0)
    assert np.logical_and(crossing.bitmap, gt.bitmap).sum() == 1


def elongated_pair(rng, shape=(128, 128)):
    """Two disjoint parallel segments, gap 2..6 px, overlapping along their length."""
    length_a, length_b = int(rng.integers(20, 51)), int(rng.integers(20, 51))
    gap = int(rng.integers(2, 7))
    col = int(rng.integers(10, shape[1] - 10 - gap))
    start_a = int(rng.integers(35, 45))
    start_b = start_a + int(rng.integers(-(length_b // 2), length_a // 2))
    a = np.zeros(shape, dtype=np.uint8)
    b = np.zeros(shape, dtype=np.uint8)
    a[start_a:start_a + length_a, col] = 1
    b[start_b:start_b + length_b, col + gap] = 1
    if rng.random() < 0.5:
        a, b = a.T.copy(), b.T.copy()
    return InstanceMask(MapClass.DIVIDER, a), InstanceMask(MapClass.DIVIDER, b)


def test_dice_cost_falls_with_radius_on_random_elongated_pairs():
    rng = np.random.default_rng(21)
    for _ in range(50):
        pred, gt = elongated_pair(rng)
        assert not np.logical_and(pred.bitmap, gt.bitmap).any()
        costs, touching = [], []
        for r in range(7):
            spec = DilationSpec(r, KernelShape.SQUARE)
            costs.append(dice_cost(pred, gt, spec))
            touching.append(bool(np.logical_and(dilate_array(pred.bitmap, spec),
                                                dilate_array(gt.bitmap, spec)).any()))
        # until the dilated masks touch, only the +1 smoothing term moves the cost
        for r in range(6):
            if touching[r]:
                assert costs[r + 1] <= costs[r] + 1e-12
            else:
                assert costs[r] > 0.97
        assert touching[-1] and costs[-1] < costs[0]


def test_dilation_never_modifies_stored_masks(parallel_and_crossing):
    gt, parallel, crossing = parallel_and_crossing
    before = [m.bitmap.copy() for m in (gt, parallel, crossing)]
    match([as_prediction(parallel), as_prediction(crossing)], [gt], MatcherConfig(dilation_radius=3))
    for m, b in zip((gt, parallel, crossing), before):
        assert np.array_equal(m.bitmap, b)


def test_classification_cost_is_negative_probability():
    pred = Prediction(line_mask(5), np.array([0.2, 0.5, 0.3]))
    assert classification_cost(pred, MapClass.PED_CROSSING) == pytest.approx(-0.5)
    assert pred.cls is MapClass.PED_CROSSING


def test_shape_mismatch_raises():
    with pytest.raises(DimensionMismatchError):
        dice_cost(line_mask(5), line_mask(5, shape=(100, 101)))


# ============================================================
# Matrix
# ============================================================
def test_cost_matrix_recomposes_from_terms():
    rng = np.random.default_rng(9)
    gts = [InstanceMask(MapClass(c), (rng.random((30, 30)) > 0.7).astype(np.uint8))
           for c in ("divider", "ped_crossing", "curb")]
    preds = []
    for _ in range(3):
        probs = rng.dirichlet(np.ones(3))
        preds.append(Prediction(InstanceMask(MapClass.DIVIDER, rng.random((30, 30))), probs))
    weights = CostWeights(2.0, 5.0, 5.0)
    spec = DilationSpec(1)
    costs = cost_matrix(preds, gts, weights, spec)
    for i, pred in enumerate(preds):
        for j, gt in enumerate(gts):
            expected = (2.0 * classification_cost(pred, gt.cls)
                        + 5.0 * ce_cost(pred.mask, gt, spec)
                        + 5.0 * dice_cost(pred.mask, gt, spec))
            assert costs.values[i, j] == pytest.approx(expected)


def test_class_radius_overrides_by_gt_class(parallel_and_crossing):
    gt, parallel, _ = parallel_and_crossing
    pred = [as_prediction(parallel)]
    default = cost_matrix(pred, [gt], dilation=DilationSpec(0))
    override = cost_matrix(pred, [gt], dilation=DilationSpec(0), class_radius={"divider": 2})
    widened = cost_matrix(pred, [gt], dilation=DilationSpec(2))
    assert override.values[0, 0] == pytest.approx(widened.values[0, 0])
    assert override.values[0, 0] < default.values[0, 0]


def test_empty_sides_give_empty_matrix():
    assert cost_matrix([], [line_mask(3)]).shape == (0, 1)
    costs, result = match([as_prediction(line_mask(3))], [])
    assert costs.shape == (1, 0)
    assert result.pairs == () and result.unmatched_preds == (0,)


def test_non_finite_costs_rejected():
    with pytest.raises(InvariantViolation):
        CostMatrix(np.array([[0.0, np.inf]]))


# ============================================================
# Assignment
# ============================================================
def brute_force_assignment(values):
    """Minimum total over every maximal one-to-one matching; ties to the smallest sorted pair list."""
    n_pred, n_gt = values.shape
    best = None
    if n_pred <= n_gt:
        candidates = (tuple((i, g) for i, g in enumerate(p)) for p in permutations(range(n_gt), n_pred))
    else:
        candidates = (tuple(sorted((p_idx, j) for j, p_idx in enumerate(p)))
                      for p in permutations(range(n_pred), n_gt))
    for pairs in candidates:
        key = (sum(values[i, j] for i, j in pairs), pairs)
        if best is None or key < best:
            best = key
    return best


def test_assignment_is_the_permutation_optimum():
    rng = np.random.default_rng(4)
    for k in range(500):
        shape = tuple(int(v) for v in rng.integers(1, 8, size=2))
        if k % 2:
            # small integers: plenty of exactly tied optima
            values = rng.integers(0, 4, size=shape).astype(np.float64)
        else:
            values = rng.uniform(-2.0, 10.0, size=shape)
        result = assign(CostMatrix(values))
        total, pairs = brute_force_assignment(values)
        assert len(result.pairs) == min(shape)
        if k % 2:
            assert result.total_cost == total
            assert result.pairs == pairs
        else:
            assert result.total_cost == pytest.approx(total, abs=1e-9)
            assert len({g for _, g in result.pairs}) == len(result.pairs)


def test_ties_go_to_the_lowest_index_pairs():
    assert assign(CostMatrix(np.zeros((3, 3)))).pairs == ((0, 0), (1, 1), (2, 2))
    tall = assign(CostMatrix(np.zeros((3, 2))))
    assert tall.pairs == ((0, 0), (1, 1)) and tall.unmatched_preds == (2,)
    wide = assign(CostMatrix(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])))
    assert wide.pairs == ((0, 1), (1, 0)) and wide.unmatched_gts == (2,)
    # two optimal totals of 2: {(0,0),(1,1)} and {(0,1),(1,0)}
    assert assign(CostMatrix(np.array([[1.0, 1.0], [1.0, 1.0]]))).pairs == ((0, 0), (1, 1))
    assert assign(CostMatrix(np.array([[2.0, 1.0], [1.0, 0.0]]))).pairs == ((0, 0), (1, 1))


def test_rectangular_assignment_leaves_unmatched():
    values = np.array([[5.0, 1.0, 9.0], [2.0, 8.0, 7.0]])
    result = assign(CostMatrix(values))
    assert result.pairs == ((0, 1), (1, 0))
    assert result.unmatched_gts == (2,)
    assert result.unmatched_preds == ()
    assert result.total_cost == pytest.approx(3.0)
    assert result.gt_for(1) == 0 and result.gt_for(5) is None
    assert result.to_dict()["pairs"] == [[0, 1], [1, 0]]


def test_dilation_flips_the_assignment(parallel_and_crossing):
    gt, parallel, crossing = parallel_and_crossing
    preds = [as_prediction(parallel), as_prediction(crossing)]
    _, tight = match(preds, [gt], MatcherConfig(dilation_radius=0))
    _, loose = match(preds, [gt], MatcherConfig(dilation_radius=2))
    assert tight.pairs == ((1, 0),)
    assert loose.pairs == ((0, 0),)


# ============================================================
# Configuration and predictions
# ============================================================
@pytest.mark.parametrize("probs", [[0.5, 0.5], [0.5, 0.6, 0.1], [0.6, 0.6, -0.2], [0.2, 0.2, 0.2, 0.2, 0.2]])
def test_invalid_class_probs(probs):
    with pytest.raises(InvalidInstanceError):
        Prediction(line_mask(1), np.array(probs))


def test_no_object_mass_is_ignored_for_class():
    pred = Prediction(line_mask(1), np.array([0.1, 0.3, 0.2, 0.4]))
    assert pred.cls is MapClass.PED_CROSSING


@pytest.mark.parametrize("weights", [(-1.0, 5.0, 5.0), (0.0, 0.0, 0.0)])
def test_invalid_weights(weights):
    with pytest.raises(ConfigError):
        CostWeights(*weights)


def test_matcher_config_normalizes_class_names():
    cfg = MatcherConfig(dilation_radius=2, class_radius={"lane": 0, MapClass.CURB: 3})
    assert cfg.class_radius == {"divider": 0, "curb": 3}
    assert cfg.dilation_for(MapClass.DIVIDER).radius == 0
    assert cfg.dilation_for(MapClass.PED_CROSSING).radius == 2
    with pytest.raises(ConfigError):
        MatcherConfig(dilation_radius=-1)
