"""
run_config.py - One run configuration covering every stage.

A YAML (or JSON) file may override any subset of fields; everything else
takes the default from config/config.py. Each section is validated by
building the stage's own config dataclass.

    grid:        {x_min, x_max, y_min, y_max, resolution}
    raster:      {divider_width_px, curb_mode, label_dilation_radius, label_dilation_shape}
    trace:       {turn_policy, turd_size, smooth, corner_threshold, flatness_tolerance_px}
    postprocess: {confidence_threshold, edge_margin_px, curb_wall_offset_px, centerline_samples, simplify_eps_px}
    matcher:     {w_cls, w_ce, w_dice, dilation_radius, dilation_shape, class_radius}
    eval:        {cd_thresholds, sample_interval}
    perturb:     {seed, point_noise_sigma, drop_prob, spurious_rate, blur_radius, confidence_model}
"""

from dataclasses import dataclass, field, fields, replace
from enum import Enum
import json
import logging
import os
from typing import Any, Dict, Optional

import yaml

from config.config import CD_THRESHOLD_PRESETS
from src.core_types import GridSpec
from src.errors import ConfigError, GeometryError
from src.evaluation import EvalConfig
from src.matcher import CostWeights, MatcherConfig
from src.perturb import PerturbSpec
from src.postprocess import PostprocessConfig
from src.rasterizer import RasterConfig
from src.tracer import TraceConfig

logger = logging.getLogger(__name__)

_WEIGHT_KEYS = ("w_cls", "w_ce", "w_dice")
_MATCHER_KEYS = _WEIGHT_KEYS + ("dilation_radius", "dilation_shape", "class_radius")


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    raster: RasterConfig = field(default_factory=RasterConfig)
    trace: TraceConfig = field(default_factory=TraceConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    perturb: PerturbSpec = field(default_factory=PerturbSpec)

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, perturb=replace(self.perturb, seed=int(seed)))


SECTION_TYPES = {
    "grid": GridSpec,
    "raster": RasterConfig,
    "trace": TraceConfig,
    "postprocess": PostprocessConfig,
    "eval": EvalConfig,
    "perturb": PerturbSpec,
}


def _filter_keys(section: str, values: Dict[str, Any], allowed, strict: bool) -> Dict[str, Any]:
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        if strict:
            raise ConfigError(f"[{section}] unknown key(s) {unknown}")
        logger.warning("[%s] ignoring unknown key(s) %s", section, unknown)
    return {k: v for k, v in values.items() if k in allowed}


def _build_section(section: str, values: Dict[str, Any], strict: bool):
    if section == "matcher":
        values = _filter_keys(section, values, _MATCHER_KEYS, strict)
        weights = CostWeights(**{k: float(values.pop(k)) for k in _WEIGHT_KEYS if k in values})
        return MatcherConfig(weights=weights, **values)

    cls = SECTION_TYPES[section]
    values = _filter_keys(section, values, [f.name for f in fields(cls)], strict)
    if section == "eval" and isinstance(values.get("cd_thresholds"), str):
        preset = values["cd_thresholds"]
        if preset not in CD_THRESHOLD_PRESETS:
            raise ConfigError(f"[eval] unknown threshold preset '{preset}'")
        values["cd_thresholds"] = CD_THRESHOLD_PRESETS[preset]
    if section == "eval" and "cd_thresholds" in values:
        values["cd_thresholds"] = tuple(values["cd_thresholds"])
    try:
        return cls(**values)
    except GeometryError as exc:
        raise ConfigError(f"[{section}] {exc}")
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}")


def run_config_from_dict(obj: Optional[Dict[str, Any]], strict: bool = False) -> RunConfig:
    obj = obj or {}
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a mapping of sections")
    known = set(SECTION_TYPES) | {"matcher"}
    sections = _filter_keys("config", obj, known, strict)
    built = {}
    for name, values in sections.items():
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] section must be a mapping")
        built[name] = _build_section(name, dict(values), strict)
    return RunConfig(**built)


def load_run_config(path: Optional[str], strict: bool = False) -> RunConfig:
    """Read a YAML/JSON run config; a missing path gives the defaults."""
    if path is None:
        return RunConfig()
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        if path.lower().endswith(".json"):
            obj = json.loads(text)
        else:
            obj = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config ({exc})")
    return run_config_from_dict(obj, strict)


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def run_config_to_dict(cfg: RunConfig) -> Dict[str, Any]:
    """Plain-data form of a run config, for provenance in reports."""
    out: Dict[str, Any] = {}
    for name in SECTION_TYPES:
        section = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(section, f.name)) for f in fields(section)}
    m = cfg.matcher
    out["matcher"] = {
        "w_cls": m.weights.w_cls,
        "w_ce": m.weights.w_ce,
        "w_dice": m.weights.w_dice,
        "dilation_radius": m.dilation_radius,
        "dilation_shape": _plain(m.dilation_shape),
        "class_radius": dict(m.class_radius),
    }
    return out
