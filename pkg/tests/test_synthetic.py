import numpy as np
import pytest

from src.core_types import GridSpec, MapClass, Scene, VectorInstance
from src.errors import ConfigError
from src.synthetic import gen_synthetic, validate_scene


@pytest.mark.parametrize("difficulty", ["easy", "hard"])
def test_generated_scenes_are_valid(difficulty):
    for scene in gen_synthetic(seed=3, n_scenes=8, difficulty=difficulty):
        assert validate_scene(scene) == []


def test_easy_scene_layout():
    (scene,) = gen_synthetic(seed=0, n_scenes=1)
    assert len(scene.by_class(MapClass.CURB)) == 2
    assert len(scene.by_class(MapClass.PED_CROSSING)) == 1
    assert scene.by_class(MapClass.DIVIDER)
    assert all(p.closed for p in scene.by_class(MapClass.PED_CROSSING))
    for curb in scene.by_class(MapClass.CURB):
        assert curb.points[:, 1].min() == pytest.approx(scene.grid.y_min)
        assert curb.points[:, 1].max() == pytest.approx(scene.grid.y_max)


def test_same_seed_same_scenes():
    a = gen_synthetic(seed=12, n_scenes=3, difficulty="hard")
    b = gen_synthetic(seed=12, n_scenes=3, difficulty="hard")
    for sa, sb in zip(a, b):
        assert len(sa.gt_vectors) == len(sb.gt_vectors)
        for va, vb in zip(sa.gt_vectors, sb.gt_vectors):
            assert va.cls is vb.cls and np.array_equal(va.points, vb.points)


def test_scene_k_does_not_depend_on_count():
    short = gen_synthetic(seed=5, n_scenes=2)
    long = gen_synthetic(seed=5, n_scenes=6)
    for sa, sb in zip(short, long):
        assert all(np.array_equal(va.points, vb.points) for va, vb in zip(sa.gt_vectors, sb.gt_vectors))


def test_custom_grid_is_respected():
    grid = GridSpec(-20.0, 20.0, -40.0, 40.0, 0.2)
    (scene,) = gen_synthetic(seed=1, n_scenes=1, grid=grid)
    assert scene.grid == grid
    assert validate_scene(scene) == []


def test_bad_arguments():
    with pytest.raises(ConfigError):
        gen_synthetic(difficulty="medium")
    with pytest.raises(ConfigError):
        gen_synthetic(n_scenes=-1)
    assert gen_synthetic(n_scenes=0) == []


def test_validate_reports_problems(unit_grid):
    scene = Scene.create(unit_grid, [
        VectorInstance(MapClass.CURB, np.array([[5.5, 0.0], [5.5, 10.0]])),
    ], ego=(5.5, 5.0))
    problems = validate_scene(scene)
    assert "no divider instance" in problems
    assert "no ped_crossing instance" in problems
    assert "ego lies on a curb pixel" in problems

    outside = Scene(unit_grid, (), (50.0, 50.0))
    assert "ego lies outside the grid" in validate_scene(outside)
