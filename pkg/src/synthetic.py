"""
synthetic.py - Deterministic family of synthetic road scenes.

Every scene has a drivable corridor bounded by a left and a right curb that
run border to border, lane dividers parallel to the curbs, and rectangular
pedestrian crossings spanning the corridor. ``hard`` scenes bend the corridor
along a sine profile, shorten the dividers and rotate everything about the
ego by a few degrees. Scene k of a seed is drawn from
default_rng([seed, k]), so it does not depend on how many scenes are asked for.
"""

import logging
from typing import Callable, List

import numpy as np

from config.config import DIFFICULTIES, LANE_WIDTH, RANDOM_SEED
from src.core_types import GridSpec, MapClass, Scene, VectorInstance, world_to_pixel
from src.errors import AmbiguousEgoError, ConfigError, MapToolkitError
from src.rasterizer import gen_curb_masks

logger = logging.getLogger(__name__)

MAX_ROTATION_DEG = 8.0
# Curbs sit this fraction of the half-width away from the ego
CURB_OFFSET_RANGE = (0.55, 0.8)


def _profile(rng: np.random.Generator, curved: bool) -> Callable[[np.ndarray], np.ndarray]:
    """Lateral offset of the corridor as a function of y."""
    if not curved:
        return lambda y: np.zeros_like(np.asarray(y, dtype=np.float64))
    amplitude = rng.uniform(0.5, 1.5)
    wavelength = rng.uniform(60.0, 120.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    return lambda y: amplitude * np.sin(2 * np.pi * np.asarray(y) / wavelength + phase)


def _line(x0: float, y0: float, y1: float, offset, curved: bool) -> np.ndarray:
    ys = np.arange(y0, y1, 1.0) if curved else np.array([y0])
    ys = np.append(ys, y1)
    return np.column_stack([x0 + offset(ys), ys])


def _rotate(points: np.ndarray, center, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rel = np.asarray(points) - center
    return np.column_stack([c * rel[:, 0] - s * rel[:, 1], s * rel[:, 0] + c * rel[:, 1]]) + center


def make_scene(rng: np.random.Generator, difficulty: str = "easy", grid: GridSpec = GridSpec()) -> Scene:
    hard = difficulty == "hard"
    ego = np.array([(grid.x_min + grid.x_max) / 2.0, (grid.y_min + grid.y_max) / 2.0])
    half_w = (grid.x_max - grid.x_min) / 2.0
    half_h = (grid.y_max - grid.y_min) / 2.0
    offset = _profile(rng, hard)

    # hard scenes overshoot the extent so rotated lines still reach the border
    pad = 10.0 if hard else 0.0
    y_lo, y_hi = grid.y_min - pad, grid.y_max + pad
    x_left = ego[0] - rng.uniform(*CURB_OFFSET_RANGE) * half_w
    x_right = ego[0] + rng.uniform(*CURB_OFFSET_RANGE) * half_w

    instances: List[VectorInstance] = []

    # dividers: lane lines measured from the left curb, >= 0.85 lane from the right one
    slots = []
    x = x_left + LANE_WIDTH
    while x <= x_right - 0.85 * LANE_WIDTH:
        slots.append(x)
        x += LANE_WIDTH
    n_div = int(rng.integers(1, len(slots) + 1)) if slots else 0
    chosen = sorted(rng.choice(len(slots), size=n_div, replace=False)) if n_div else []
    for k in chosen:
        if hard:
            y0 = rng.uniform(grid.y_min - 10.0, grid.y_min + 15.0)
            y1 = rng.uniform(grid.y_max - 15.0, grid.y_max + 10.0)
        else:
            y0, y1 = grid.y_min, grid.y_max
        instances.append(VectorInstance(MapClass.DIVIDER, _line(slots[k], y0, y1, offset, hard)))

    # ped crossings across the corridor, one per side of the ego
    n_ped = int(rng.integers(1, 3)) if hard else 1
    sides = rng.permutation([-1.0, 1.0])[:n_ped]
    for side in sides:
        yc = ego[1] + side * rng.uniform(0.3, 0.6) * half_h
        depth = rng.uniform(3.0, 5.0)
        shift = float(offset(np.array([yc]))[0])
        x0, x1 = x_left + shift + 1.0, x_right + shift - 1.0
        y0, y1 = yc - depth / 2.0, yc + depth / 2.0
        rect = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        instances.append(VectorInstance(MapClass.PED_CROSSING, rect, closed=True))

    for x_curb in (x_left, x_right):
        instances.append(VectorInstance(MapClass.CURB, _line(x_curb, y_lo, y_hi, offset, hard)))

    if hard:
        angle = np.deg2rad(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
        instances = [v.with_points(_rotate(v.points, ego, angle)) for v in instances]

    return Scene.create(grid, instances, (float(ego[0]), float(ego[1])))


def gen_synthetic(seed: int = RANDOM_SEED, n_scenes: int = 1, difficulty: str = "easy",
                  grid: GridSpec = GridSpec()) -> List[Scene]:
    """``n_scenes`` scenes, each with at least one instance of every class."""
    if difficulty not in DIFFICULTIES:
        raise ConfigError(f"difficulty must be one of {DIFFICULTIES}, got '{difficulty}'")
    if n_scenes < 0:
        raise ConfigError("n_scenes must be >= 0")
    return [make_scene(np.random.default_rng([seed, k]), difficulty, grid) for k in range(n_scenes)]


def validate_scene(scene: Scene) -> List[str]:
    """Problems that would make the scene unusable as ground truth; empty when valid."""
    problems = []
    grid = scene.grid
    for k, inst in enumerate(scene.gt_vectors):
        pts = inst.points
        if (pts[:, 0].min() < grid.x_min or pts[:, 0].max() > grid.x_max
                or pts[:, 1].min() < grid.y_min or pts[:, 1].max() > grid.y_max):
            problems.append(f"instance {k} leaves the grid extent")
    if not world_to_pixel(scene.ego, grid).inside:
        problems.append("ego lies outside the grid")
    for cls in MapClass:
        if not scene.by_class(cls):
            problems.append(f"no {cls.value} instance")
    curbs = scene.by_class(MapClass.CURB)
    if curbs:
        try:
            if not gen_curb_masks(curbs, grid, scene.ego):
                problems.append("curbs bound no domain besides the ego's")
        except AmbiguousEgoError:
            problems.append("ego lies on a curb pixel")
        except MapToolkitError as exc:
            problems.append(str(exc))
    return problems
