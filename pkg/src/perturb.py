"""
perturb.py - Synthetic predictions generated from ground truth.

Each ground-truth instance is jittered in vector space (integer-pixel
offsets, so results do not depend on float rounding), rasterized like the
labels, optionally given soft edges, and tagged with class probabilities.
Dropout and spurious short polylines model misses and false alarms.
Random streams are per instance: default_rng([seed, scene_index, k]).
"""

from dataclasses import dataclass
from enum import Enum
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import linear_sum_assignment

from config.config import (
    RANDOM_SEED, PERTURB_SIGMA, PERTURB_DROP_PROB, PERTURB_SPURIOUS_RATE,
    PERTURB_BLUR_RADIUS, PERTURB_CONFIDENCE_MODEL, SPURIOUS_CONFIDENCE,
)
from src.core_types import GridSpec, InstanceMask, MapClass, MAP_CLASSES, Scene, VectorInstance
from src.errors import AmbiguousEgoError, ConfigError, GeometryError, InvalidInstanceError
from src.matcher import Prediction, one_hot
from src.rasterizer import (
    RasterConfig, dilate, gen_curb_masks, rasterize_polygon, rasterize_polyline,
)

logger = logging.getLogger(__name__)

# Stream id reserved for spurious instances of a scene.
SPURIOUS_STREAM = 999_999
# Curb domains get stream ids after all vector instances.
DOMAIN_STREAM_OFFSET = 100_000


class ConfidenceModel(Enum):
    ORACLE = "oracle"
    NOISY_LOGIT = "noisy_logit"


@dataclass(frozen=True)
class PerturbSpec:
    seed: int = RANDOM_SEED
    point_noise_sigma: float = PERTURB_SIGMA
    drop_prob: float = PERTURB_DROP_PROB
    spurious_rate: float = PERTURB_SPURIOUS_RATE
    blur_radius: float = PERTURB_BLUR_RADIUS
    confidence_model: ConfidenceModel = ConfidenceModel(PERTURB_CONFIDENCE_MODEL)

    def __post_init__(self):
        if isinstance(self.confidence_model, str):
            try:
                object.__setattr__(self, "confidence_model",
                                   ConfidenceModel(self.confidence_model.lower()))
            except ValueError:
                raise ConfigError(f"unknown confidence model '{self.confidence_model}'")
        if self.point_noise_sigma < 0:
            raise ConfigError("point_noise_sigma must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigError("drop_prob must lie in [0, 1]")
        if self.spurious_rate < 0 or self.blur_radius < 0:
            raise ConfigError("spurious_rate and blur_radius must be >= 0")

    @property
    def is_identity(self) -> bool:
        return (self.point_noise_sigma == 0 and self.drop_prob == 0 and self.spurious_rate == 0
                and self.blur_radius == 0 and self.confidence_model is ConfidenceModel.ORACLE)


# ============================================================
# Helpers
# ============================================================
def _rng(spec: PerturbSpec, scene_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, scene_index, stream])


def jitter_points(points: np.ndarray, sigma: float, rng: np.random.Generator,
                  resolution: float) -> np.ndarray:
    """Whole-instance offset ~N(0, sigma) plus per-point noise ~N(0, sigma/2), snapped to pixels."""
    pts = np.asarray(points, dtype=np.float64)
    shift = rng.standard_normal(2)
    noise = rng.standard_normal(pts.shape)
    offset = np.round(shift * sigma / resolution) * resolution
    wiggle = np.round(noise * 0.5 * sigma / resolution) * resolution
    return pts + offset + wiggle


def _jittered_instance(inst: VectorInstance, spec: PerturbSpec, rng: np.random.Generator,
                       grid: GridSpec) -> VectorInstance:
    """Jitter, falling back to a rigid shift when the noisy shape is invalid."""
    moved = jitter_points(inst.points, spec.point_noise_sigma, rng, grid.resolution)
    try:
        out = VectorInstance.from_points(inst.cls, moved, inst.closed, inst.confidence)
        if inst.closed and len(out) < 3:
            raise InvalidInstanceError("ring collapsed")
        return out
    except InvalidInstanceError:
        drift = moved.mean(axis=0) - np.asarray(inst.points).mean(axis=0)
        return inst.with_points(
            np.asarray(inst.points) + np.round(drift / grid.resolution) * grid.resolution
        )


def _rasterize_instance(inst: VectorInstance, grid: GridSpec, raster_cfg: RasterConfig) -> InstanceMask:
    if inst.cls is MapClass.PED_CROSSING:
        return rasterize_polygon(inst.points, grid, inst.cls)
    pts = inst.points if not inst.closed else np.vstack([inst.points, inst.points[:1]])
    return rasterize_polyline(pts, grid, raster_cfg.divider_width_px, inst.cls)


def _soften(bitmap: np.ndarray, blur_radius: float) -> np.ndarray:
    """Soft halo around the mask; pixels of the mask itself stay at 1."""
    if blur_radius <= 0:
        return bitmap
    halo = gaussian_filter(bitmap.astype(np.float64), sigma=blur_radius, mode="constant")
    return np.clip(np.maximum(bitmap.astype(np.float64), halo), 0.0, 1.0)


def _class_probs(map_class: MapClass, spec: PerturbSpec, rng: np.random.Generator):
    """(class_probs, confidence) under the configured confidence model."""
    if spec.confidence_model is ConfidenceModel.ORACLE:
        return one_hot(map_class), 1.0
    logits = 4.0 * one_hot(map_class) + rng.standard_normal(len(MAP_CLASSES))
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    confidence = float(1.0 / (1.0 + np.exp(-(3.0 + rng.standard_normal()))))
    return probs, confidence


def _make_prediction(mask: InstanceMask, spec: PerturbSpec, rng: np.random.Generator,
                     raster_cfg: RasterConfig, source_index: Optional[int]) -> Prediction:
    mask = dilate(mask, raster_cfg.label_dilation)
    probs, confidence = _class_probs(mask.cls, spec, rng)
    bitmap = _soften(np.asarray(mask.bitmap), spec.blur_radius)
    return Prediction(InstanceMask(mask.cls, bitmap, confidence, mask.flags), probs, source_index)


def _match_domains(pred_masks: Sequence[InstanceMask], gt_masks: Sequence[InstanceMask]) -> List[Optional[int]]:
    """Pair jittered curb domains with ground-truth domains by maximum IoU."""
    if not pred_masks or not gt_masks:
        return [None] * len(pred_masks)
    scores = np.zeros((len(pred_masks), len(gt_masks)))
    for i, p in enumerate(pred_masks):
        pb = p.binary()
        for j, g in enumerate(gt_masks):
            gb = g.binary()
            union = np.logical_or(pb, gb).sum()
            scores[i, j] = np.logical_and(pb, gb).sum() / union if union else 0.0
    rows, cols = linear_sum_assignment(-scores)
    out: List[Optional[int]] = [None] * len(pred_masks)
    for r, c in zip(rows, cols):
        if scores[r, c] > 0:
            out[r] = int(c)
    return out


# ============================================================
# Public API
# ============================================================
def spurious_instances(grid: GridSpec, spec: PerturbSpec, scene_index: int = 0) -> List[VectorInstance]:
    """Random short 3-point polylines; count ~ Poisson(spurious_rate)."""
    rng = _rng(spec, scene_index, SPURIOUS_STREAM)
    count = int(rng.poisson(spec.spurious_rate)) if spec.spurious_rate > 0 else 0
    out = []
    for _ in range(count):
        cls = MAP_CLASSES[int(rng.integers(len(MAP_CLASSES)))]
        start = np.array([rng.uniform(grid.x_min, grid.x_max), rng.uniform(grid.y_min, grid.y_max)])
        angle = rng.uniform(0.0, 2 * np.pi)
        length = rng.uniform(1.0, 5.0)
        step = np.array([np.cos(angle), np.sin(angle)]) * length / 2.0
        pts = np.vstack([start, start + step, start + 2 * step])
        pts[:, 0] = np.clip(pts[:, 0], grid.x_min, grid.x_max)
        pts[:, 1] = np.clip(pts[:, 1], grid.y_min, grid.y_max)
        try:
            out.append(VectorInstance.from_points(cls, pts, False, SPURIOUS_CONFIDENCE))
        except InvalidInstanceError:
            continue
    return out


def perturb_scene(scene: Scene, spec: PerturbSpec = PerturbSpec(), scene_index: int = 0,
                  raster_cfg: RasterConfig = RasterConfig()) -> List[Prediction]:
    """
    Predictions for one scene, in ground-truth mask order followed by the
    spurious ones. ``source_index`` is the index of the ground-truth mask
    (as produced by rasterize_scene) that a prediction came from. With the
    identity spec the masks equal the ground-truth rasterization exactly.
    """
    grid = scene.grid
    preds: List[Prediction] = []
    curbs: List[Tuple[int, VectorInstance]] = []
    mask_index = 0

    for k, inst in enumerate(scene.gt_vectors):
        if inst.cls is MapClass.CURB and raster_cfg.curb_mode == "polygon":
            curbs.append((k, inst))
            continue
        rng = _rng(spec, scene_index, k)
        dropped = rng.random() < spec.drop_prob
        moved = _jittered_instance(inst, spec, rng, grid)
        if not dropped:
            try:
                mask = _rasterize_instance(moved, grid, raster_cfg)
            except GeometryError:
                mask = _rasterize_instance(inst, grid, raster_cfg)
            preds.append(_make_prediction(mask, spec, rng, raster_cfg, mask_index))
        mask_index += 1

    if curbs:
        preds.extend(_perturb_curbs(scene, curbs, spec, scene_index, raster_cfg, mask_index))

    for s, inst in enumerate(spurious_instances(grid, spec, scene_index)):
        rng = _rng(spec, scene_index, SPURIOUS_STREAM + 1 + s)
        probs, _ = _class_probs(inst.cls, spec, rng)
        mask = rasterize_polyline(inst.points, grid, raster_cfg.divider_width_px, inst.cls,
                                  SPURIOUS_CONFIDENCE)
        bitmap = _soften(np.asarray(mask.bitmap), spec.blur_radius)
        preds.append(Prediction(InstanceMask(inst.cls, bitmap, SPURIOUS_CONFIDENCE), probs, None))
    return preds


def _perturb_curbs(scene: Scene, curbs: List[Tuple[int, VectorInstance]], spec: PerturbSpec, scene_index: int,
                   raster_cfg: RasterConfig, first_index: int) -> List[Prediction]:
    grid = scene.grid
    gt_domains = gen_curb_masks([c for _, c in curbs], grid, scene.ego)
    moved = [_jittered_instance(c, spec, _rng(spec, scene_index, k), grid) for k, c in curbs]
    try:
        domains = gen_curb_masks(moved, grid, scene.ego)
        sources = _match_domains(domains, gt_domains)
    except AmbiguousEgoError:
        logger.warning("jittered curbs cover the ego pixel in scene %d; using label domains",
                       scene_index)
        domains = gt_domains
        sources = list(range(len(gt_domains)))

    preds = []
    for d, (mask, src) in enumerate(zip(domains, sources)):
        rng = _rng(spec, scene_index, DOMAIN_STREAM_OFFSET + d)
        if rng.random() < spec.drop_prob:
            continue
        preds.append(_make_prediction(mask, spec, rng, raster_cfg,
                                      None if src is None else first_index + src))
    return preds


def perturb_corpus(scenes: Sequence[Scene], spec: PerturbSpec = PerturbSpec(),
                   raster_cfg: RasterConfig = RasterConfig()) -> List[List[Prediction]]:
    return [perturb_scene(s, spec, i, raster_cfg) for i, s in enumerate(scenes)]
