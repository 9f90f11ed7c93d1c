"""
evaluation.py - Map-element evaluation metrics.
Computes mask IoU, Chamfer distance between curves, CD-thresholded average
precision per class, and the aggregate report (IoU / AP / mAP).
"""

from dataclasses import dataclass, field
import json
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from shapely.geometry import LinearRing, Polygon
from sklearn.neighbors import NearestNeighbors

from config.config import (
    CD_THRESHOLDS_LOOSE, SAMPLE_INTERVAL, REPORT_FORMAT_VERSION, EDGE_MARGIN_PX, N_JOBS,
)
from src.core_types import (
    GridSpec, InstanceMask, MapClass, MAP_CLASSES, Scene, VectorInstance, check_same_shape,
)
from src.errors import (
    AmbiguousEgoError, ConfigError, DimensionMismatchError, InvalidInstanceError,
)
from src.rasterizer import RasterConfig, rasterize_with_config

logger = logging.getLogger(__name__)


# ============================================================
# Config / report types
# ============================================================
@dataclass(frozen=True)
class EvalConfig:
    cd_thresholds: Tuple[float, ...] = CD_THRESHOLDS_LOOSE
    sample_interval: float = SAMPLE_INTERVAL

    def __post_init__(self):
        thresholds = tuple(sorted({float(t) for t in self.cd_thresholds}))
        if not thresholds or thresholds[0] <= 0:
            raise ConfigError(f"CD thresholds must be positive, got {self.cd_thresholds}")
        if not self.sample_interval > 0:
            raise ConfigError("sample_interval must be positive")
        object.__setattr__(self, "cd_thresholds", thresholds)


@dataclass(frozen=True, eq=False)
class EvalCase:
    """One scene's ground truth with the predictions made for it."""

    scene: Scene
    pred_vectors: Sequence[VectorInstance] = ()
    pred_masks: Optional[Sequence[InstanceMask]] = None


@dataclass
class EvalReport:
    thresholds: Tuple[float, ...]
    iou: Dict[str, float]
    ap: Dict[str, Dict[str, float]]
    class_ap: Dict[str, float]
    mAP: float
    matches: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": REPORT_FORMAT_VERSION,
            "thresholds": [round(t, 6) for t in self.thresholds],
            "iou": {k: round(v, 6) for k, v in self.iou.items()},
            "ap": {k: {t: round(v, 6) for t, v in d.items()} for k, d in self.ap.items()},
            "class_ap": {k: round(v, 6) for k, v in self.class_ap.items()},
            "mAP": round(self.mAP, 6),
            "matches": self.matches,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_frame(self) -> pd.DataFrame:
        """One row per class: IoU, AP at each threshold, class AP."""
        rows = []
        for cls in MAP_CLASSES:
            row = {"class": cls.value, "IoU": self.iou[cls.value]}
            for t, v in self.ap[cls.value].items():
                row[f"AP@{t}"] = v
            row["AP"] = self.class_ap[cls.value]
            rows.append(row)
        return pd.DataFrame(rows).set_index("class")


def threshold_key(t: float) -> str:
    return f"{t:g}"


# ============================================================
# IoU
# ============================================================
def _iou_counts(a: np.ndarray, b: np.ndarray) -> Tuple[int, int]:
    return int(np.logical_and(a, b).sum()), int(np.logical_or(a, b).sum())


def iou(a: InstanceMask, b: InstanceMask) -> float:
    """|a & b| / |a | b| after binarizing at 0.5; two empty masks score 1.0."""
    check_same_shape(a, b)
    inter, union = _iou_counts(a.binary(), b.binary())
    return 1.0 if union == 0 else inter / union


def class_union(masks: Sequence[InstanceMask], map_class: MapClass,
                shape: Tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        if m.cls is map_class:
            if m.shape != shape:
                raise DimensionMismatchError(f"mask shape {m.shape} does not match {shape}")
            out |= m.binary()
    return out


def semantic_iou(preds: Sequence[InstanceMask], gts: Sequence[InstanceMask],
                 map_class: MapClass, shape: Optional[Tuple[int, int]] = None) -> float:
    """IoU of the class-level unions of predicted and ground-truth masks."""
    if shape is None:
        shapes = [m.shape for m in list(preds) + list(gts)]
        if not shapes:
            return 1.0
        shape = shapes[0]
    inter, union = _iou_counts(class_union(preds, map_class, shape), class_union(gts, map_class, shape))
    return 1.0 if union == 0 else inter / union


# ============================================================
# Chamfer distance
# ============================================================
def chamfer_dir(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over points of a of the distance to the nearest point of b."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise InvalidInstanceError("chamfer distance needs two nonempty point sets")
    nn = NearestNeighbors(n_neighbors=1, algorithm="kd_tree").fit(b)
    dist, _ = nn.kneighbors(a)
    return float(dist.mean())


def resample_curve(inst: VectorInstance, interval: float = SAMPLE_INTERVAL) -> np.ndarray:
    """
    Arc-length samples every ~interval meters. Open curves keep both
    endpoints; closed curves are sampled once around the ring. A curve of
    zero length becomes its single point.
    """
    pts = np.asarray(inst.points, dtype=np.float64)
    if inst.closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0.0:
        return pts[:1].copy()
    n = max(int(math.ceil(total / interval)), 1)
    t = np.linspace(0.0, total, n, endpoint=False) if inst.closed else np.linspace(0.0, total, n + 1)
    return np.column_stack([np.interp(t, s, pts[:, 0]), np.interp(t, s, pts[:, 1])])


def chamfer_points(a: np.ndarray, b: np.ndarray) -> float:
    return chamfer_dir(a, b) + chamfer_dir(b, a)


def chamfer(a: VectorInstance, b: VectorInstance, cfg: EvalConfig = EvalConfig()) -> float:
    """Bidirectional Chamfer distance of the resampled curves."""
    return chamfer_points(resample_curve(a, cfg.sample_interval), resample_curve(b, cfg.sample_interval))


def chamfer_matrix(preds: Sequence[VectorInstance], gts: Sequence[VectorInstance],
                   cfg: EvalConfig = EvalConfig()) -> np.ndarray:
    """P x G Chamfer distances, each curve resampled once."""
    sp = [resample_curve(p, cfg.sample_interval) for p in preds]
    sg = [resample_curve(g, cfg.sample_interval) for g in gts]
    out = np.zeros((len(sp), len(sg)), dtype=np.float64)
    for i, a in enumerate(sp):
        for j, b in enumerate(sg):
            out[i, j] = chamfer_points(a, b)
    return out


# ============================================================
# Average precision
# ============================================================
def compute_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolated area under the monotone precision envelope."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _greedy_ap(confidences: Sequence[np.ndarray], cd_mats: Sequence[np.ndarray],
               threshold: float) -> Tuple[float, List[dict]]:
    """
    Greedy-by-confidence matching across scenes. Each prediction takes the
    unmatched same-scene ground truth with the smallest CD; it is a true
    positive when that CD is below the threshold.
    """
    n_gt = sum(m.shape[1] for m in cd_mats)
    order = [(-float(c), s, i) for s, conf in enumerate(confidences) for i, c in enumerate(conf)]
    order.sort(key=lambda item: item[0])
    if n_gt == 0:
        return (1.0 if not order else 0.0), []
    if not order:
        return 0.0, []

    taken = [np.zeros(m.shape[1], dtype=bool) for m in cd_mats]
    tp = np.zeros(len(order))
    records = []
    for rank, (_, s, i) in enumerate(order):
        row = np.where(taken[s], np.inf, cd_mats[s][i])
        gt_idx, cd = None, None
        if row.size and np.isfinite(row).any():
            gt_idx = int(np.argmin(row))
            cd = float(row[gt_idx])
            if cd < threshold:
                taken[s][gt_idx] = True
                tp[rank] = 1.0
        records.append({"scene": s, "pred": i, "gt": gt_idx,
                        "cd": None if cd is None else round(cd, 6), "tp": bool(tp[rank])})

    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1.0 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).eps)
    return compute_ap(recall, precision), records


def _as_scenes(items) -> List[List[VectorInstance]]:
    items = list(items)
    if items and isinstance(items[0], VectorInstance):
        return [items]
    return [list(s) for s in items]


def average_precision(preds, gts, map_class: MapClass, threshold: float,
                      cfg: EvalConfig = EvalConfig()) -> float:
    """
    AP of one class at one CD threshold. ``preds`` and ``gts`` are either
    flat instance lists (one scene) or per-scene lists of equal length.
    """
    scenes_p, scenes_g = _as_scenes(preds), _as_scenes(gts)
    if len(scenes_p) != len(scenes_g):
        if not scenes_p:
            scenes_p = [[] for _ in scenes_g]
        elif not scenes_g:
            scenes_g = [[] for _ in scenes_p]
        else:
            raise InvalidInstanceError("preds and gts cover a different number of scenes")
    confs, mats = [], []
    for p, g in zip(scenes_p, scenes_g):
        p = [v for v in p if v.cls is map_class]
        g = [v for v in g if v.cls is map_class]
        confs.append(np.array([v.confidence for v in p]))
        mats.append(chamfer_matrix(p, g, cfg))
    return _greedy_ap(confs, mats, threshold)[0]


# ============================================================
# Full report
# ============================================================
def snap_curb_ends(inst: VectorInstance, grid: GridSpec, tol_px: float) -> VectorInstance:
    """Move open-curve endpoints lying within tol_px of a border onto it."""
    pts = np.array(inst.points, dtype=np.float64)
    tol = tol_px * grid.resolution
    for k in (0, -1):
        x, y = pts[k]
        if x - grid.x_min <= tol:
            x = grid.x_min
        elif grid.x_max - x <= tol:
            x = grid.x_max
        if y - grid.y_min <= tol:
            y = grid.y_min
        elif grid.y_max - y <= tol:
            y = grid.y_max
        pts[k] = (x, y)
    return VectorInstance.from_points(inst.cls, pts, inst.closed, inst.confidence)


def _repair_ring(v: VectorInstance) -> Optional[VectorInstance]:
    """Largest simple ring covering a self-intersecting prediction, or None."""
    if len(v) < 3:
        logger.warning("%s ring with %d points dropped from IoU", v.cls.value, len(v))
        return None
    if LinearRing(v.points).is_simple:
        return v
    fixed = Polygon(v.points).buffer(0)
    parts = [g for g in getattr(fixed, "geoms", [fixed]) if g.geom_type == "Polygon" and not g.is_empty]
    if not parts:
        logger.warning("self-intersecting %s ring has no area; dropped from IoU", v.cls.value)
        return None
    logger.warning("self-intersecting %s ring repaired for IoU", v.cls.value)
    largest = max(parts, key=lambda g: g.area)
    return VectorInstance.from_points(v.cls, np.asarray(largest.exterior.coords)[:-1], True, v.confidence)


def masks_from_vectors(vectors: Sequence[VectorInstance], scene: Scene,
                       raster_cfg: RasterConfig = RasterConfig()) -> List[InstanceMask]:
    """
    Rasterize predicted vectors like ground truth. Curb ends trimmed off the
    border by edge removal are snapped back so domains close again; a
    prediction whose curbs cross the ego pixel yields no curb masks.
    """
    fixed = []
    for v in vectors:
        if v.cls is MapClass.CURB and not v.closed and raster_cfg.curb_mode == "polygon":
            v = snap_curb_ends(v, scene.grid, EDGE_MARGIN_PX + 1.0)
        elif v.closed:
            v = _repair_ring(v)
            if v is None:
                continue
        fixed.append(v)
    pred_scene = Scene(scene.grid, tuple(fixed), scene.ego)
    try:
        return rasterize_with_config(pred_scene, raster_cfg)
    except AmbiguousEgoError as exc:
        logger.warning("prediction curbs cover the ego pixel (%s); curb masks skipped", exc)
        without_curbs = Scene(scene.grid, tuple(v for v in fixed if v.cls is not MapClass.CURB), scene.ego)
        return rasterize_with_config(without_curbs, raster_cfg)


def _scene_terms(case: EvalCase, cfg: EvalConfig, raster_cfg: RasterConfig) -> dict:
    scene = case.scene
    gt_masks = rasterize_with_config(scene, raster_cfg)
    pred_masks = case.pred_masks
    if pred_masks is None:
        pred_masks = masks_from_vectors(case.pred_vectors, scene, raster_cfg)
    terms = {"iou": {}, "conf": {}, "cd": {}}
    for cls in MAP_CLASSES:
        terms["iou"][cls.value] = _iou_counts(
            class_union(pred_masks, cls, scene.grid.shape),
            class_union(gt_masks, cls, scene.grid.shape),
        )
        p = [v for v in case.pred_vectors if v.cls is cls]
        g = [v for v in scene.gt_vectors if v.cls is cls]
        terms["conf"][cls.value] = np.array([v.confidence for v in p])
        terms["cd"][cls.value] = chamfer_matrix(p, g, cfg)
    return terms


def evaluate(cases: Sequence[EvalCase], cfg: EvalConfig = EvalConfig(),
             raster_cfg: RasterConfig = RasterConfig(), n_jobs: int = N_JOBS) -> EvalReport:
    """
    IoU per class (intersections and unions summed over scenes), AP per class
    and threshold, class AP = mean over thresholds, mAP = mean over classes.
    """
    if n_jobs == 1:
        terms = [_scene_terms(c, cfg, raster_cfg) for c in cases]
    else:
        terms = Parallel(n_jobs=n_jobs)(delayed(_scene_terms)(c, cfg, raster_cfg) for c in cases)

    iou_out, ap_out, class_ap, matches = {}, {}, {}, []
    for cls in MAP_CLASSES:
        inter = sum(t["iou"][cls.value][0] for t in terms)
        union = sum(t["iou"][cls.value][1] for t in terms)
        iou_out[cls.value] = 1.0 if union == 0 else inter / union

        ap_out[cls.value] = {}
        confs = [t["conf"][cls.value] for t in terms]
        mats = [t["cd"][cls.value] for t in terms]
        for thr in cfg.cd_thresholds:
            ap, records = _greedy_ap(confs, mats, thr)
            ap_out[cls.value][threshold_key(thr)] = ap
            for r in records:
                matches.append({"class": cls.value, "threshold": thr, **r})
        class_ap[cls.value] = float(np.mean(list(ap_out[cls.value].values())))

    mean_ap = float(np.mean([class_ap[c.value] for c in MAP_CLASSES]))
    return EvalReport(cfg.cd_thresholds, iou_out, ap_out, class_ap, mean_ap, matches)
