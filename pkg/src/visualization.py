"""
visualization.py - Scene previews and SVG export.

    1. plot_scene           - vectors (and optional mask underlay) as PNG
    2. plot_masks           - class-colored composite of instance masks
    3. plot_matching_study  - assignment accuracy vs dilation radius
    4. scene_to_svg / save_svg - vector geometry as an SVG document in meters

Palette: dividers blue, ped crossings green, curbs red.
"""

import logging
import os
from typing import Optional, Sequence

import numpy as np
import matplotlib
matplotlib.use("Agg")  # Non-interactive backend for saving plots
import matplotlib.pyplot as plt
from matplotlib.colors import to_rgb
import pandas as pd

from config.config import CLASS_COLORS, COORD_DECIMALS
from src.core_types import GridSpec, InstanceMask, MapClass, Scene, VectorInstance
from src.data_loader import atomic_write

logger = logging.getLogger(__name__)


# ============================================================
# Helper: Save figure
# ============================================================
def _save_fig(fig, filepath: str) -> str:
    """Save figure to ``filepath`` and close it."""
    os.makedirs(os.path.dirname(os.path.abspath(filepath)), exist_ok=True)
    fig.savefig(filepath, dpi=150, bbox_inches="tight", facecolor="white")
    plt.close(fig)
    logger.info("saved %s", filepath)
    return filepath


def _draw_vectors(ax, vectors: Sequence[VectorInstance], linestyle: str = "-", label_suffix: str = ""):
    seen = set()
    for v in vectors:
        pts = np.asarray(v.points)
        if v.closed:
            pts = np.vstack([pts, pts[:1]])
        label = None
        if v.cls not in seen:
            label = f"{v.cls.value}{label_suffix}"
            seen.add(v.cls)
        ax.plot(pts[:, 0], pts[:, 1], linestyle, color=CLASS_COLORS[v.cls.value], linewidth=1.5, label=label)


def composite(masks: Sequence[InstanceMask], grid: GridSpec) -> np.ndarray:
    """RGB image (rows = y, ascending) with every mask painted in its class color."""
    img = np.ones(grid.shape + (3,))
    for m in masks:
        m.check_grid(grid)
        alpha = np.asarray(m.bitmap, dtype=np.float64)[..., None]
        img = img * (1.0 - 0.6 * alpha) + 0.6 * alpha * np.array(to_rgb(CLASS_COLORS[m.cls.value]))
    return np.clip(img, 0.0, 1.0)


# ============================================================
# 1. Scene preview
# ============================================================
def plot_scene(scene: Scene, filepath: str, predicted: Optional[Sequence[VectorInstance]] = None,
               masks: Optional[Sequence[InstanceMask]] = None, title: str = "Scene") -> str:
    """Ground-truth vectors solid, predicted vectors dashed, masks underneath."""
    grid = scene.grid
    fig, ax = plt.subplots(figsize=(5, 9))
    extent = (grid.x_min, grid.x_max, grid.y_min, grid.y_max)
    if masks:
        ax.imshow(composite(masks, grid), origin="lower", extent=extent, interpolation="nearest")

    _draw_vectors(ax, scene.gt_vectors)
    if predicted:
        _draw_vectors(ax, predicted, "--", " (pred)")
    ax.plot([scene.ego[0]], [scene.ego[1]], marker="^", color="black", markersize=8, label="ego")

    ax.set_xlim(grid.x_min, grid.x_max)
    ax.set_ylim(grid.y_min, grid.y_max)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)", fontsize=11, fontweight="bold")
    ax.set_ylabel("y (m)", fontsize=11, fontweight="bold")
    ax.set_title(title, fontsize=13, fontweight="bold")
    ax.grid(alpha=0.3, linestyle="--")
    ax.legend(loc="upper right", fontsize=8)
    return _save_fig(fig, filepath)


# ============================================================
# 2. Mask composite
# ============================================================
def plot_masks(masks: Sequence[InstanceMask], grid: GridSpec, filepath: str,
               title: str = "Instance masks") -> str:
    fig, ax = plt.subplots(figsize=(5, 9))
    ax.imshow(composite(masks, grid), origin="lower", interpolation="nearest",
              extent=(grid.x_min, grid.x_max, grid.y_min, grid.y_max))
    ax.set_aspect("equal")
    ax.set_title(f"{title} ({len(masks)})", fontsize=13, fontweight="bold")
    return _save_fig(fig, filepath)


# ============================================================
# 3. Matching study
# ============================================================
def plot_matching_study(table: pd.DataFrame, filepath: str) -> str:
    """Line plot of assignment accuracy (left axis) and mean dice cost (right axis) per radius."""
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(table.index, table["assignment_accuracy"], "o-", color="#2196F3", linewidth=2,
            label="assignment accuracy")
    ax.set_xlabel("Dilation radius (px)", fontsize=12, fontweight="bold")
    ax.set_ylabel("Assignment accuracy", fontsize=12, fontweight="bold")
    ax.set_ylim(0, 1.05)
    ax.set_xticks(list(table.index))

    ax2 = ax.twinx()
    ax2.plot(table.index, table["mean_dice_cost"], "s--", color="#F44336", linewidth=1.5,
             label="mean matched dice cost")
    ax2.set_ylabel("Mean dice cost", fontsize=12, fontweight="bold")

    ax.set_title("Matching vs dilation radius", fontsize=14, fontweight="bold")
    ax.grid(alpha=0.3, linestyle="--")
    lines = ax.get_legend_handles_labels()
    lines2 = ax2.get_legend_handles_labels()
    ax.legend(lines[0] + lines2[0], lines[1] + lines2[1], loc="lower right")
    return _save_fig(fig, filepath)


# ============================================================
# 4. SVG export
# ============================================================
def _fmt(v: float) -> str:
    return repr(round(float(v), COORD_DECIMALS) + 0.0)


def _svg_points(points: np.ndarray) -> str:
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)


def scene_to_svg(scene: Scene, instances: Optional[Sequence[VectorInstance]] = None,
                 stroke_width: Optional[float] = None) -> str:
    """
    SVG document in world meters. The y axis is flipped with a group
    transform so the picture matches the BEV frame (y up).
    """
    grid = scene.grid
    vectors = scene.gt_vectors if instances is None else instances
    width = grid.x_max - grid.x_min
    height = grid.y_max - grid.y_min
    sw = _fmt(stroke_width if stroke_width is not None else 2 * grid.resolution)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(grid.x_min)} {_fmt(-grid.y_max)} '
        f'{_fmt(width)} {_fmt(height)}" width="{_fmt(width * 10)}" height="{_fmt(height * 10)}">',
        f'  <rect x="{_fmt(grid.x_min)}" y="{_fmt(-grid.y_max)}" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" fill="white"/>',
        '  <g transform="scale(1,-1)" fill="none" stroke-linejoin="round">',
    ]
    for v in vectors:
        color = CLASS_COLORS[v.cls.value]
        tag = "polygon" if v.closed else "polyline"
        fill = f' fill="{color}" fill-opacity="0.3"' if v.cls is MapClass.PED_CROSSING else ""
        lines.append(
            f'    <{tag} class="{v.cls.value}" points="{_svg_points(v.points)}" '
            f'stroke="{color}" stroke-width="{sw}"{fill}/>'
        )
    lines.append(f'    <circle class="ego" cx="{_fmt(scene.ego[0])}" cy="{_fmt(scene.ego[1])}" '
                 f'r="{_fmt(4 * grid.resolution)}" fill="black"/>')
    lines.append("  </g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def save_svg(scene: Scene, filepath: str, instances: Optional[Sequence[VectorInstance]] = None) -> str:
    data = scene_to_svg(scene, instances).encode("utf-8")
    atomic_write(filepath, lambda fh: fh.write(data))
    return filepath
