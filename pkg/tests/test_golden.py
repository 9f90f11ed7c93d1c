"""
Checked-in outputs for a 16 x 16 m scene on a 1 m grid: one divider, one
ped crossing and one curb. Every stage must reproduce its golden file byte
for byte.
"""

import os

from src import pipeline
from src.data_loader import dump_json, load_scene, save_scene
from src.perturb import PerturbSpec
from src.run_config import RunConfig

GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")
SCENE = os.path.join(GOLDEN, "scene.json")


def golden_bytes(*parts):
    with open(os.path.join(GOLDEN, *parts), "rb") as fh:
        return fh.read()


def assert_same_directory(out_dir, golden_dir):
    names = sorted(os.listdir(os.path.join(GOLDEN, golden_dir)))
    assert sorted(os.listdir(out_dir)) == names
    for name in names:
        with open(os.path.join(out_dir, name), "rb") as fh:
            assert fh.read() == golden_bytes(golden_dir, name), name


# ============================================================
# Scene and masks
# ============================================================
def test_scene_file_is_written_back_unchanged(tmp_path):
    out = str(tmp_path / "scene.json")
    save_scene(load_scene(SCENE), out)
    with open(out, "rb") as fh:
        assert fh.read() == golden_bytes("scene.json")


def test_rasterized_masks_match_golden(tmp_path):
    out = str(tmp_path / "masks")
    paths = pipeline.run_rasterize(SCENE, out, verbose=False)
    assert [os.path.basename(p) for p in paths] == [
        "mask_000_divider.pgm", "mask_001_ped_crossing.pgm", "mask_002_curb.pgm",
    ]
    assert_same_directory(out, "masks")


def test_seed_42_perturbation_matches_golden(tmp_path):
    # first draws of the streams [42, 0, k]: divider 0.774, ped crossing 0.866, curb domain 0.872
    spec = PerturbSpec(seed=42, point_noise_sigma=0.0, drop_prob=0.8, spurious_rate=0.0, blur_radius=0.0)
    out = str(tmp_path / "perturbed")
    preds = pipeline.run_perturb(SCENE, out, RunConfig(perturb=spec), verbose=False)
    assert [p.source_index for p in preds] == [1, 2]
    assert_same_directory(out, "perturbed")


# ============================================================
# Vectorize and evaluate
# ============================================================
def test_vectorized_scene_matches_golden(tmp_path):
    out = str(tmp_path / "vectors.json")
    pipeline.run_vectorize(os.path.join(GOLDEN, "perturbed"), out, verbose=False)
    with open(out, "rb") as fh:
        assert fh.read() == golden_bytes("vectors.json")


def test_eval_report_matches_golden():
    report = pipeline.run_eval(os.path.join(GOLDEN, "predictions.json"), SCENE, verbose=False, n_jobs=1)
    assert dump_json(report.to_dict()) == golden_bytes("report.json").decode("utf-8")
