"""
cli.py - Command-line driver.

    python main.py [--config FILE] [--seed N] [--jobs N] [--strict] [--quiet|--verbose] <command> ...

Commands: rasterize, vectorize, match, eval, roundtrip, gen, svg, perturb,
ablate, degrade. Exit code 0 on success; toolkit errors are written to
stderr as one JSON object and exit with the error's code (2 for bad input,
3 for internal invariant violations).
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import List, Optional, Sequence

from config.config import (
    CD_THRESHOLD_PRESETS, DEGRADATION_SIGMAS, DIFFICULTIES, N_JOBS, OUTPUTS_DIR, RANDOM_SEED,
)
from src import pipeline
from src.data_loader import MASK_FORMATS
from src.errors import ConfigError, MapToolkitError
from src.evaluation import EvalConfig
from src.run_config import RunConfig, load_run_config

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so errors share the JSON channel."""

    def error(self, message):
        raise ConfigError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="main.py", description="HD-map raster/vector toolkit")
    parser.add_argument("--config", help="YAML or JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="perturbation / generator seed")
    parser.add_argument("--jobs", type=int, default=N_JOBS, help="scene-level worker count")
    parser.add_argument("--strict", action="store_true", help="reject unknown fields in inputs")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("--quiet", action="store_true", help="no step banners")
    noise.add_argument("--verbose", action="store_true", help="INFO-level logging")

    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("rasterize", help="scene JSON -> instance masks")
    p.add_argument("scene")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=sorted(MASK_FORMATS), default="pgm")
    p.add_argument("--preview", action="store_true", help="also write a PNG composite")

    p = sub.add_parser("vectorize", help="mask directory -> scene JSON")
    p.add_argument("mask_dir")
    p.add_argument("--out", required=True)

    p = sub.add_parser("match", help="cost matrix + assignment between two mask directories")
    p.add_argument("preds")
    p.add_argument("gts")
    p.add_argument("--radius", type=int, default=None)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="IoU / AP report of predicted against ground-truth scenes")
    p.add_argument("preds")
    p.add_argument("gts")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--thresholds", type=_float_list)
    group.add_argument("--preset", choices=sorted(CD_THRESHOLD_PRESETS))
    p.add_argument("--out")

    p = sub.add_parser("roundtrip", help="rasterize -> vectorize -> per-instance CD report")
    p.add_argument("scene")
    p.add_argument("--out")

    p = sub.add_parser("gen", help="synthetic scenes")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--difficulty", choices=DIFFICULTIES, default="easy")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("svg", help="scene JSON -> SVG")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.add_argument("--preview", action="store_true", help="also write a PNG plot")

    p = sub.add_parser("perturb", help="synthetic predictions (masks) from a scene")
    p.add_argument("scene")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--drop", type=float, default=None)
    p.add_argument("--spurious", type=float, default=None)
    p.add_argument("--blur", type=float, default=None)
    p.add_argument("--format", choices=sorted(MASK_FORMATS), default="pgm")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("ablate", help="assignment accuracy vs dilation radius")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--radii", type=_int_list, default=[0, 1, 2, 3])
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--difficulty", choices=DIFFICULTIES, default="easy")
    p.add_argument("--out-dir", default=os.path.join(OUTPUTS_DIR, "ablate"))

    p = sub.add_parser("degrade", help="mAP vs perturbation sigma")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--sigmas", type=_float_list, default=list(DEGRADATION_SIGMAS))
    p.add_argument("--difficulty", choices=DIFFICULTIES, default="easy")
    p.add_argument("--out-dir", default=os.path.join(OUTPUTS_DIR, "degrade"))
    return parser


def _configure_logging(args) -> None:
    level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _effective_config(args) -> RunConfig:
    cfg = load_run_config(args.config, args.strict).with_seed(args.seed)
    if args.command == "eval":
        if args.thresholds:
            cfg = replace(cfg, eval=EvalConfig(tuple(args.thresholds), cfg.eval.sample_interval))
        elif args.preset:
            cfg = replace(cfg, eval=EvalConfig(CD_THRESHOLD_PRESETS[args.preset], cfg.eval.sample_interval))
    if args.command in ("perturb", "ablate"):
        updates = {}
        for flag, name in (("sigma", "point_noise_sigma"), ("drop", "drop_prob"),
                           ("spurious", "spurious_rate"), ("blur", "blur_radius")):
            value = getattr(args, flag, None)
            if value is not None:
                updates[name] = value
        cfg = replace(cfg, perturb=replace(cfg.perturb, **updates))
    if args.jobs < 1 and args.jobs != -1:
        raise ConfigError("--jobs must be >= 1 (or -1 for all cores)")
    return cfg


def _dispatch(args, cfg: RunConfig) -> None:
    verbose = not args.quiet
    common = {"verbose": verbose}
    cmd = args.command
    if cmd == "rasterize":
        pipeline.run_rasterize(args.scene, args.out_dir, cfg, args.format, args.preview, args.strict, **common)
    elif cmd == "vectorize":
        pipeline.run_vectorize(args.mask_dir, args.out, cfg, args.strict, **common)
    elif cmd == "match":
        result = pipeline.run_match(args.preds, args.gts, args.out, cfg, args.radius, args.strict, **common)
        if not args.out:
            print(json.dumps(result, indent=2, sort_keys=True))
    elif cmd == "eval":
        report = pipeline.run_eval(args.preds, args.gts, args.out, cfg, args.strict, args.jobs, **common)
        if not args.out:
            print(report.to_json())
    elif cmd == "roundtrip":
        pipeline.run_roundtrip(args.scene, args.out, cfg, args.strict, args.jobs, **common)
    elif cmd == "gen":
        seed = args.seed if args.seed is not None else RANDOM_SEED
        pipeline.run_gen(args.out_dir, seed, args.count, args.difficulty, cfg, **common)
    elif cmd == "svg":
        pipeline.run_svg(args.scene, args.out, args.strict, args.preview, **common)
    elif cmd == "perturb":
        pipeline.run_perturb(args.scene, args.out_dir, cfg, args.format, args.strict, **common)
    elif cmd == "ablate":
        pipeline.run_matching_study(cfg, args.count, args.radii, args.difficulty, args.out_dir,
                                    args.jobs, **common)
    elif cmd == "degrade":
        pipeline.run_degradation(cfg, args.count, args.sigmas, args.difficulty, args.out_dir,
                                 args.jobs, **common)


def _report_error(payload: dict) -> None:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run one subcommand and return the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args)
        cfg = _effective_config(args)
        _dispatch(args, cfg)
    except MapToolkitError as exc:
        _report_error(exc.to_dict())
        return exc.exit_code
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except OSError as exc:
        _report_error({"error": "io", "message": str(exc), "exit_code": 2})
        return 2
    except Exception as exc:
        logger.exception("internal error")
        _report_error({"error": "internal", "message": f"{type(exc).__name__}: {exc}", "exit_code": 3})
        return 3
    return 0
