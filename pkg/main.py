"""
main.py - Entry point for the HD-map raster/vector toolkit.

Subcommands:
    rasterize  scene JSON → per-instance masks (PGM/PNG + manifest)
    vectorize  masks → trace → post-process → scene JSON
    match      dilated bilateral matching of two mask directories
    eval       IoU / Chamfer AP report
    roundtrip  rasterize → vectorize → per-instance CD report
    gen        synthetic scenes
    svg        scene → SVG
    perturb    synthetic predictions from ground truth
    ablate     assignment accuracy vs dilation radius
    degrade    mAP vs perturbation sigma

Usage:
    python main.py gen --seed 1 --count 5 --out-dir outputs/scenes
    python main.py roundtrip outputs/scenes/corpus.json --out outputs/roundtrip.json
"""

import sys
import os

# Add project root to Python path so imports work correctly
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli import cli


def main():
    """Main entry point - runs one subcommand and exits with its status."""
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
