"""
matcher.py - Dilation-augmented bilateral matching of predicted and
ground-truth instance masks.

Pair cost = w_cls * C_cls + w_ce * C_ce + w_dice * C_dice, where the mask
terms are computed on dilated copies of both masks (stored masks are never
changed). The one-to-one assignment is the Hungarian optimum of the matrix; among
equally optimal assignments the lowest (pred, gt) index pairs win.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from config.config import (
    W_CLS, W_CE, W_DICE, MATCH_DILATION_RADIUS, MATCH_DILATION_SHAPE, PROB_CLAMP, TIE_TOLERANCE,
)
from src.core_types import InstanceMask, MapClass, MAP_CLASSES, check_same_shape
from src.errors import ConfigError, InvalidInstanceError, InvariantViolation
from src.rasterizer import DilationSpec, KernelShape, dilate_array


# ============================================================
# Types
# ============================================================
@dataclass(frozen=True, eq=False)
class Prediction:
    """
    A predicted instance: probability mask plus class probabilities over
    (divider, ped_crossing, curb) and an optional trailing no-object mass.
    ``source_index`` records the ground-truth instance a synthetic
    prediction was generated from (None for real or spurious predictions).
    """

    mask: InstanceMask
    class_probs: np.ndarray
    source_index: Optional[int] = None

    def __post_init__(self):
        probs = np.asarray(self.class_probs, dtype=np.float64).reshape(-1)
        if len(probs) not in (len(MAP_CLASSES), len(MAP_CLASSES) + 1):
            raise InvalidInstanceError(f"class_probs needs 3 or 4 entries, got {len(probs)}")
        if np.any(probs < 0) or np.any(probs > 1):
            raise InvalidInstanceError("class probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise InvalidInstanceError(f"class probabilities sum to {probs.sum():.8f}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "class_probs", probs)

    @property
    def cls(self) -> MapClass:
        return MAP_CLASSES[int(np.argmax(self.class_probs[:len(MAP_CLASSES)]))]

    @property
    def confidence(self) -> float:
        return self.mask.confidence


def one_hot(map_class: MapClass) -> np.ndarray:
    probs = np.zeros(len(MAP_CLASSES))
    probs[map_class.index] = 1.0
    return probs


@dataclass(frozen=True)
class CostWeights:
    w_cls: float = W_CLS
    w_ce: float = W_CE
    w_dice: float = W_DICE

    def __post_init__(self):
        if min(self.w_cls, self.w_ce, self.w_dice) < 0:
            raise ConfigError("cost weights must be nonnegative")
        if self.w_cls == 0 and self.w_ce == 0 and self.w_dice == 0:
            raise ConfigError("at least one cost weight must be positive")


@dataclass(frozen=True)
class MatcherConfig:
    weights: CostWeights = field(default_factory=CostWeights)
    dilation_radius: int = MATCH_DILATION_RADIUS
    dilation_shape: str = MATCH_DILATION_SHAPE
    class_radius: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        DilationSpec(self.dilation_radius, self.dilation_shape)
        cleaned = {}
        for name, radius in dict(self.class_radius).items():
            cls = MapClass.from_string(name) if not isinstance(name, MapClass) else name
            DilationSpec(radius, self.dilation_shape)
            cleaned[cls.value] = int(radius)
        object.__setattr__(self, "class_radius", cleaned)

    @property
    def dilation(self) -> DilationSpec:
        return DilationSpec(self.dilation_radius, self.dilation_shape)

    def dilation_for(self, gt_class: MapClass) -> DilationSpec:
        radius = self.class_radius.get(gt_class.value, self.dilation_radius)
        return DilationSpec(radius, self.dilation_shape)


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """P x G costs; row = prediction, column = ground truth."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise InvariantViolation(f"cost matrix must be 2-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvariantViolation("cost matrix has non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Assignment:
    """One-to-one (pred, gt) pairs, sorted by prediction index."""

    pairs: Tuple[Tuple[int, int], ...]
    unmatched_preds: Tuple[int, ...]
    unmatched_gts: Tuple[int, ...]
    total_cost: float

    def gt_for(self, pred_index: int) -> Optional[int]:
        for p, g in self.pairs:
            if p == pred_index:
                return g
        return None

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "unmatched_preds": list(self.unmatched_preds),
            "unmatched_gts": list(self.unmatched_gts),
            "total_cost": self.total_cost,
        }


# ============================================================
# Cost terms
# ============================================================
def classification_cost(pred: Prediction, gt_class: MapClass) -> float:
    """Negative predicted probability of the ground-truth class, in [-1, 0]."""
    return -float(pred.class_probs[gt_class.index])


def _dilated_pair(pred_mask: InstanceMask, gt_mask: InstanceMask,
                  dilation: DilationSpec) -> Tuple[np.ndarray, np.ndarray]:
    check_same_shape(pred_mask, gt_mask)
    p = dilate_array(np.asarray(pred_mask.bitmap, dtype=np.float64), dilation)
    g = dilate_array(np.asarray(gt_mask.bitmap, dtype=np.float64), dilation) >= 0.5
    return p, g.astype(np.float64)


def _ce(p: np.ndarray, g: np.ndarray) -> float:
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)))


def _dice(p: np.ndarray, g: np.ndarray) -> float:
    return float(1.0 - (2.0 * np.sum(p * g) + 1.0) / (np.sum(p) + np.sum(g) + 1.0))


def ce_cost(pred_mask: InstanceMask, gt_mask: InstanceMask,
            dilation: DilationSpec = DilationSpec()) -> float:
    """Mean binary cross-entropy of the dilated prediction against the dilated truth."""
    return _ce(*_dilated_pair(pred_mask, gt_mask, dilation))


def dice_cost(pred_mask: InstanceMask, gt_mask: InstanceMask,
              dilation: DilationSpec = DilationSpec()) -> float:
    """1 - (2 sum(pg) + 1) / (sum(p) + sum(g) + 1) on the dilated masks."""
    return _dice(*_dilated_pair(pred_mask, gt_mask, dilation))


# ============================================================
# Matrix and assignment
# ============================================================
def cost_matrix(preds: Sequence[Prediction], gts: Sequence[InstanceMask],
                weights: CostWeights = CostWeights(),
                dilation: DilationSpec = DilationSpec(MATCH_DILATION_RADIUS, KernelShape.SQUARE),
                class_radius: Optional[Mapping[str, int]] = None) -> CostMatrix:
    """
    Weighted pair costs. ``class_radius`` optionally overrides the dilation
    radius per ground-truth class name.
    """
    values = np.zeros((len(preds), len(gts)), dtype=np.float64)
    if not len(preds) or not len(gts):
        return CostMatrix(values)

    class_radius = dict(class_radius or {})
    spec_cache: Dict[int, DilationSpec] = {}
    pred_cache: Dict[Tuple[int, int], np.ndarray] = {}
    gt_cache: Dict[Tuple[int, int], np.ndarray] = {}

    for g_idx, gt in enumerate(gts):
        radius = class_radius.get(gt.cls.value, dilation.radius)
        spec = spec_cache.setdefault(radius, DilationSpec(radius, dilation.kernel_shape))
        key = (g_idx, radius)
        if key not in gt_cache:
            g = dilate_array(np.asarray(gt.bitmap, dtype=np.float64), spec) >= 0.5
            gt_cache[key] = g.astype(np.float64)
        g = gt_cache[key]

        for p_idx, pred in enumerate(preds):
            check_same_shape(pred.mask, gt)
            pkey = (p_idx, radius)
            if pkey not in pred_cache:
                pred_cache[pkey] = dilate_array(np.asarray(pred.mask.bitmap, dtype=np.float64), spec)
            p = pred_cache[pkey]
            values[p_idx, g_idx] = (
                weights.w_cls * classification_cost(pred, gt.cls)
                + (weights.w_ce * _ce(p, g) if weights.w_ce else 0.0)
                + (weights.w_dice * _dice(p, g) if weights.w_dice else 0.0)
            )
    return CostMatrix(values)


def _remaining_optimum(values: np.ndarray, used_rows: Set[int], used_cols: Set[int]) -> Tuple[float, int]:
    """Optimal total and pair count over the rows and columns not yet fixed."""
    rows = [r for r in range(values.shape[0]) if r not in used_rows]
    cols = [c for c in range(values.shape[1]) if c not in used_cols]
    if not rows or not cols:
        return 0.0, 0
    sub = values[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub)
    return float(sub[r, c].sum()), len(r)


def _lowest_index_optimum(values: np.ndarray, best: float) -> List[Tuple[int, int]]:
    """
    Among all optimal assignments, the one whose sorted pair list is
    lexicographically smallest: each prediction in turn takes the lowest
    ground-truth index (or stays unmatched, ranked last) that still allows
    the optimal total.
    """
    n_pred, n_gt = values.shape
    target = min(n_pred, n_gt)
    tol = TIE_TOLERANCE * max(1.0, abs(best))
    pairs: List[Tuple[int, int]] = []
    used_rows: Set[int] = set()
    used_cols: Set[int] = set()
    fixed = 0.0
    for i in range(n_pred):
        used_rows.add(i)
        for j in [c for c in range(n_gt) if c not in used_cols] + [None]:
            if j is None:
                rest, n = _remaining_optimum(values, used_rows, used_cols)
                if len(pairs) + n == target and fixed + rest <= best + tol:
                    break
                continue
            rest, n = _remaining_optimum(values, used_rows, used_cols | {j})
            if len(pairs) + 1 + n == target and fixed + values[i, j] + rest <= best + tol:
                pairs.append((i, j))
                used_cols.add(j)
                fixed += float(values[i, j])
                break
    return pairs


def assign(costs: CostMatrix) -> Assignment:
    """
    Minimum-total-cost one-to-one assignment (Hungarian). Ties between
    equally optimal assignments go to the lowest (pred, gt) index pairs.
    """
    n_pred, n_gt = costs.shape
    if n_pred == 0 or n_gt == 0:
        return Assignment((), tuple(range(n_pred)), tuple(range(n_gt)), 0.0)

    rows, cols = linear_sum_assignment(costs.values)
    if len(rows) != min(n_pred, n_gt):
        raise InvariantViolation("assignment is not maximal")
    best = float(costs.values[rows, cols].sum())
    pairs = tuple(_lowest_index_optimum(costs.values, best))
    if len(pairs) != min(n_pred, n_gt):
        raise InvariantViolation("tie resolution lost the optimal assignment")
    matched_p = {p for p, _ in pairs}
    matched_g = {g for _, g in pairs}
    total = float(sum(costs.values[p, g] for p, g in pairs))
    return Assignment(
        pairs,
        tuple(i for i in range(n_pred) if i not in matched_p),
        tuple(j for j in range(n_gt) if j not in matched_g),
        total,
    )


def match(preds: Sequence[Prediction], gts: Sequence[InstanceMask],
          cfg: MatcherConfig = MatcherConfig()) -> Tuple[CostMatrix, Assignment]:
    costs = cost_matrix(preds, gts, cfg.weights, cfg.dilation, cfg.class_radius)
    return costs, assign(costs)
