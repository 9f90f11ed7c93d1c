"""
pipeline.py - Stage orchestrators behind the CLI subcommands.

Flow:
    Scene JSON → Rasterize (labels) → [Perturb] → Match
    Instance masks → Trace → Post-process → Scene JSON
    Predicted vs ground-truth vectors → IoU / Chamfer / AP report

Every run_* function prints the STEP banner and status lines (silenced with
verbose=False), reads and writes files through data_loader, and fans
per-scene work out with joblib when n_jobs != 1.
"""

import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from config.config import COORD_DECIMALS, DEGRADATION_SIGMAS, N_JOBS
from src.core_types import InstanceMask, MapClass, MAP_CLASSES, Scene, VectorInstance, canonicalize
from src.data_loader import (
    load_masks, load_scenes, manifest_summary, save_frame_csv, save_json, save_masks,
    save_scene, save_scenes,
)
from src.errors import DimensionMismatchError, SchemaError
from src.evaluation import EvalCase, EvalReport, chamfer, evaluate
from src.matcher import MatcherConfig, Prediction, dice_cost, match, one_hot
from src.perturb import PerturbSpec, perturb_scene
from src.postprocess import vectorize
from src.rasterizer import rasterize_with_config
from src.run_config import RunConfig, run_config_to_dict
from src.synthetic import gen_synthetic, validate_scene
from src.visualization import plot_masks, plot_matching_study, plot_scene, save_svg


# ============================================================
# Console helpers
# ============================================================
def _banner(step: int, title: str, verbose: bool) -> None:
    if verbose:
        print("=" * 60)
        print(f"STEP {step}: {title}")
        print("=" * 60)


def _status(verbose: bool, **items) -> None:
    if not verbose:
        return
    width = max(len(k) for k in items)
    for key, value in items.items():
        print(f"  {key.replace('_', ' '):<{width}} : {value}")
    print()


def _parallel(func, items, n_jobs: int):
    if n_jobs == 1:
        return [func(*it) for it in items]
    return Parallel(n_jobs=n_jobs)(delayed(func)(*it) for it in items)


# ============================================================
# Per-scene workers
# ============================================================
def vectorize_scene_masks(masks: Sequence[InstanceMask], scene: Scene, cfg: RunConfig) -> List[VectorInstance]:
    return vectorize(masks, scene.grid, cfg.trace, cfg.postprocess, cfg.raster.curb_mode)


def canonical_outputs(vectors: Sequence[VectorInstance]) -> List[VectorInstance]:
    """Rounded to file precision and canonicalized; written scenes do not depend on where tracing started."""
    return [
        canonicalize(VectorInstance.from_points(v.cls, np.round(v.points, COORD_DECIMALS), v.closed, v.confidence))
        for v in vectors
    ]


def roundtrip_scene(scene: Scene, cfg: RunConfig, scene_index: int = 0) -> Tuple[List[VectorInstance], List[dict]]:
    """Rasterize, vectorize, and score every ground-truth instance against its nearest output."""
    masks = rasterize_with_config(scene, cfg.raster)
    outputs = vectorize_scene_masks(masks, scene, cfg)
    tolerance = 2 * scene.grid.resolution
    rows = []
    for k, gt in enumerate(scene.gt_vectors):
        candidates = [chamfer(v, gt, cfg.eval) for v in outputs if v.cls is gt.cls]
        cd = min(candidates) if candidates else float("inf")
        rows.append({
            "scene": scene_index,
            "instance": k,
            "class": gt.cls.value,
            "n_points": len(gt),
            "n_outputs": len(candidates),
            "cd": cd,
            "within_tolerance": bool(cd <= tolerance),
        })
    return outputs, rows


def _perturbed_vectors(scene: Scene, cfg: RunConfig, spec: PerturbSpec, scene_index: int) -> List[VectorInstance]:
    preds = perturb_scene(scene, spec, scene_index, cfg.raster)
    return vectorize_scene_masks([p.mask for p in preds], scene, cfg)


def _study_scene(scene: Scene, cfg: RunConfig, spec: PerturbSpec, scene_index: int,
                 radii: Sequence[int]) -> Dict[int, Tuple[int, int, List[float]]]:
    """Per radius: (correctly assigned, predictions with a source, matched dice costs)."""
    gts = rasterize_with_config(scene, cfg.raster)
    preds = perturb_scene(scene, spec, scene_index, cfg.raster)
    out = {}
    for radius in radii:
        m_cfg = MatcherConfig(cfg.matcher.weights, radius, cfg.matcher.dilation_shape, cfg.matcher.class_radius)
        _, assignment = match(preds, gts, m_cfg)
        correct = sum(1 for p, g in assignment.pairs if preds[p].source_index == g)
        sourced = sum(1 for p in preds if p.source_index is not None)
        dice = [dice_cost(preds[p].mask, gts[g], m_cfg.dilation_for(gts[g].cls)) for p, g in assignment.pairs]
        out[radius] = (correct, sourced, dice)
    return out


# ============================================================
# Subcommand stages
# ============================================================
def run_rasterize(scene_path: str, out_dir: str, cfg: RunConfig = RunConfig(), fmt: str = "pgm",
                  preview: bool = False, strict: bool = False, verbose: bool = True) -> List[str]:
    _banner(1, "Rasterizing Scene", verbose)
    scenes = load_scenes(scene_path, strict)
    paths = []
    for k, scene in enumerate(scenes):
        target = out_dir if len(scenes) == 1 else os.path.join(out_dir, f"scene_{k:03d}")
        masks = rasterize_with_config(scene, cfg.raster)
        paths.extend(save_masks(masks, target, scene.grid, fmt, scene.ego))
        if preview:
            plot_masks(masks, scene.grid, os.path.join(target, "preview.png"))
        _status(verbose, scene=k, grid=f"{scene.grid.height} x {scene.grid.width} px",
                masks=manifest_summary(masks), output=target)
    return paths


def run_vectorize(mask_dir: str, out_path: str, cfg: RunConfig = RunConfig(),
                  strict: bool = False, verbose: bool = True) -> List[VectorInstance]:
    _banner(2, "Vectorizing Masks", verbose)
    grid, ego, masks = load_masks(mask_dir, strict)
    scene = Scene(grid, (), ego)
    vectors = canonical_outputs(vectorize_scene_masks(masks, scene, cfg))
    save_scene(scene, out_path, vectors)
    counts = {c.value: sum(1 for v in vectors if v.cls is c) for c in MapClass}
    _status(verbose, masks_in=len(masks), instances_out=counts, output=out_path)
    return vectors


def run_match(pred_dir: str, gt_dir: str, out_path: Optional[str] = None, cfg: RunConfig = RunConfig(),
              radius: Optional[int] = None, strict: bool = False, verbose: bool = True) -> dict:
    _banner(3, "Bilateral Matching", verbose)
    p_grid, _, p_masks = load_masks(pred_dir, strict)
    g_grid, _, g_masks = load_masks(gt_dir, strict)
    if p_grid != g_grid:
        raise DimensionMismatchError("prediction and ground-truth grids differ")
    m_cfg = cfg.matcher
    if radius is not None:
        m_cfg = MatcherConfig(m_cfg.weights, radius, m_cfg.dilation_shape, m_cfg.class_radius)
    preds = [Prediction(m, one_hot(m.cls)) for m in p_masks]
    costs, assignment = match(preds, g_masks, m_cfg)
    result = {
        "dilation_radius": m_cfg.dilation_radius,
        "weights": {"w_cls": m_cfg.weights.w_cls, "w_ce": m_cfg.weights.w_ce, "w_dice": m_cfg.weights.w_dice},
        "cost_matrix": np.round(costs.values, 6).tolist(),
        "assignment": assignment.to_dict(),
    }
    if out_path:
        save_json(result, out_path)
    _status(verbose, predictions=len(preds), ground_truth=len(g_masks),
            pairs=len(assignment.pairs), total_cost=f"{assignment.total_cost:.4f}")
    return result


def run_eval(pred_path: str, gt_path: str, out_path: Optional[str] = None, cfg: RunConfig = RunConfig(),
             strict: bool = False, n_jobs: int = N_JOBS, verbose: bool = True) -> EvalReport:
    _banner(4, "Evaluating Predictions", verbose)
    preds = load_scenes(pred_path, strict)
    gts = load_scenes(gt_path, strict)
    if len(preds) != len(gts):
        raise SchemaError(f"{len(preds)} prediction scenes for {len(gts)} ground-truth scenes")
    for k, (p, g) in enumerate(zip(preds, gts)):
        if p.grid != g.grid:
            raise DimensionMismatchError(f"scene {k}: prediction and ground-truth grids differ")
    cases = [EvalCase(g, p.gt_vectors) for p, g in zip(preds, gts)]
    report = evaluate(cases, cfg.eval, cfg.raster, n_jobs)
    if out_path:
        doc = report.to_dict()
        doc["config"] = run_config_to_dict(cfg)
        save_json(doc, out_path)
        save_frame_csv(report.to_frame(), os.path.splitext(out_path)[0] + ".csv")
    if verbose:
        print(report.to_frame().round(4).to_string())
        print()
    _status(verbose, scenes=len(cases), thresholds=list(report.thresholds), mAP=f"{report.mAP:.4f}")
    return report


def run_roundtrip(scene_path: str, out_path: Optional[str] = None, cfg: RunConfig = RunConfig(),
                  strict: bool = False, n_jobs: int = N_JOBS,
                  verbose: bool = True) -> Tuple[pd.DataFrame, EvalReport]:
    """Rasterize → vectorize every scene; per-instance CD table plus the AP report."""
    _banner(5, "Round Trip (rasterize → vectorize)", verbose)
    scenes = load_scenes(scene_path, strict)
    results = _parallel(roundtrip_scene, [(s, cfg, k) for k, s in enumerate(scenes)], n_jobs)
    rows = [r for _, scene_rows in results for r in scene_rows]
    table = pd.DataFrame(rows, columns=["scene", "instance", "class", "n_points", "n_outputs",
                                        "cd", "within_tolerance"])
    cases = [EvalCase(s, outputs) for s, (outputs, _) in zip(scenes, results)]
    report = evaluate(cases, cfg.eval, cfg.raster, n_jobs)

    if out_path:
        doc = report.to_dict()
        doc["instances"] = [
            {**r, "cd": None if not np.isfinite(r["cd"]) else round(r["cd"], 6)} for r in rows
        ]
        doc["config"] = run_config_to_dict(cfg)
        save_json(doc, out_path)
        save_frame_csv(table.set_index(["scene", "instance"]), os.path.splitext(out_path)[0] + ".csv")
    if verbose:
        summary = table.groupby("class").agg(
            instances=("cd", "size"), mean_cd=("cd", "mean"), max_cd=("cd", "max"),
            within_tolerance=("within_tolerance", "mean"),
        )
        print(summary.round(4).to_string())
        print()
    _status(verbose, scenes=len(scenes), instances=len(table), mAP=f"{report.mAP:.4f}")
    return table, report


def run_gen(out_dir: str, seed: int, count: int, difficulty: str = "easy", cfg: RunConfig = RunConfig(),
            verbose: bool = True) -> List[str]:
    _banner(1, "Generating Synthetic Scenes", verbose)
    scenes = gen_synthetic(seed, count, difficulty, cfg.grid)
    invalid = sum(1 for s in scenes if validate_scene(s))
    paths = []
    for k, scene in enumerate(scenes):
        path = os.path.join(out_dir, f"scene_{k:03d}.json")
        save_scene(scene, path)
        paths.append(path)
    save_scenes(scenes, os.path.join(out_dir, "corpus.json"))
    _status(verbose, seed=seed, difficulty=difficulty, scenes=len(scenes),
            instances=sum(len(s.gt_vectors) for s in scenes), invalid=invalid, output=out_dir)
    return paths


def run_svg(scene_path: str, out_path: str, strict: bool = False, preview: bool = False,
            verbose: bool = True) -> str:
    _banner(6, "Exporting SVG", verbose)
    scene = load_scenes(scene_path, strict)[0]
    save_svg(scene, out_path)
    if preview:
        plot_scene(scene, os.path.splitext(out_path)[0] + ".png")
    _status(verbose, instances=len(scene.gt_vectors), output=out_path)
    return out_path


def run_perturb(scene_path: str, out_dir: str, cfg: RunConfig = RunConfig(), fmt: str = "pgm",
                strict: bool = False, verbose: bool = True) -> List[Prediction]:
    _banner(2, "Perturbing Ground Truth", verbose)
    scene = load_scenes(scene_path, strict)[0]
    preds = perturb_scene(scene, cfg.perturb, 0, cfg.raster)
    masks = [p.mask for p in preds]
    save_masks(masks, out_dir, scene.grid, fmt, scene.ego)
    _status(verbose, seed=cfg.perturb.seed, sigma=cfg.perturb.point_noise_sigma,
            predictions=manifest_summary(masks), output=out_dir)
    return preds


def run_matching_study(cfg: RunConfig = RunConfig(), count: int = 20, radii: Sequence[int] = (0, 1, 2, 3),
                       difficulty: str = "easy", out_dir: Optional[str] = None, n_jobs: int = N_JOBS,
                       verbose: bool = True) -> pd.DataFrame:
    """
    Assignment accuracy (predictions matched to the instance they were
    generated from) and mean matched dice cost for each dilation radius.
    """
    _banner(7, "Matching Study (dilation radius)", verbose)
    scenes = gen_synthetic(cfg.perturb.seed, count, difficulty, cfg.grid)
    per_scene = _parallel(_study_scene, [(s, cfg, cfg.perturb, k, tuple(radii)) for k, s in enumerate(scenes)],
                          n_jobs)
    rows = []
    for radius in radii:
        correct = sum(r[radius][0] for r in per_scene)
        sourced = sum(r[radius][1] for r in per_scene)
        dice = [d for r in per_scene for d in r[radius][2]]
        rows.append({
            "radius": radius,
            "assignment_accuracy": correct / sourced if sourced else 1.0,
            "mean_dice_cost": float(np.mean(dice)) if dice else 0.0,
        })
    table = pd.DataFrame(rows).set_index("radius")
    if out_dir:
        save_frame_csv(table, os.path.join(out_dir, "matching_study.csv"))
        plot_matching_study(table, os.path.join(out_dir, "matching_study.png"))
    if verbose:
        print(table.round(4).to_string())
        print()
    _status(verbose, scenes=count, sigma=cfg.perturb.point_noise_sigma, radii=list(radii))
    return table


def run_degradation(cfg: RunConfig = RunConfig(), count: int = 20,
                    sigmas: Sequence[float] = DEGRADATION_SIGMAS, difficulty: str = "easy",
                    out_dir: Optional[str] = None, n_jobs: int = N_JOBS, verbose: bool = True) -> pd.DataFrame:
    """mAP of perturbed-then-vectorized predictions for each jitter sigma."""
    _banner(8, "Degradation Study (perturbation sigma)", verbose)
    scenes = gen_synthetic(cfg.perturb.seed, count, difficulty, cfg.grid)
    rows = []
    for sigma in sigmas:
        spec = PerturbSpec(cfg.perturb.seed, float(sigma), cfg.perturb.drop_prob, cfg.perturb.spurious_rate,
                           cfg.perturb.blur_radius, cfg.perturb.confidence_model)
        outputs = _parallel(_perturbed_vectors, [(s, cfg, spec, k) for k, s in enumerate(scenes)], n_jobs)
        report = evaluate([EvalCase(s, o) for s, o in zip(scenes, outputs)], cfg.eval, cfg.raster, n_jobs)
        row = {"sigma": float(sigma), "mAP": report.mAP}
        row.update({f"AP_{c.value}": report.class_ap[c.value] for c in MAP_CLASSES})
        rows.append(row)
    table = pd.DataFrame(rows).set_index("sigma")
    if out_dir:
        save_frame_csv(table, os.path.join(out_dir, "degradation.csv"))
    if verbose:
        print(table.round(4).to_string())
        print()
    _status(verbose, scenes=count, sigmas=list(sigmas))
    return table
