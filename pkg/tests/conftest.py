import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core_types import GridSpec, MapClass, Scene, VectorInstance  # noqa: E402


@pytest.fixture
def unit_grid():
    """10 x 10 pixels of 1 m; pixel (r, c) covers [c, c+1) x [r, r+1)."""
    return GridSpec(0.0, 10.0, 0.0, 10.0, 1.0)


@pytest.fixture
def grid100():
    return GridSpec(0.0, 100.0, 0.0, 100.0, 1.0)


@pytest.fixture
def default_grid():
    return GridSpec()


@pytest.fixture
def corridor_scene():
    """Two straight curbs, one divider and one ped crossing on the default grid."""
    grid = GridSpec()
    instances = [
        VectorInstance(MapClass.DIVIDER, np.array([[1.6, -30.0], [1.6, 30.0]])),
        VectorInstance(MapClass.PED_CROSSING,
                       np.array([[-8.0, 12.0], [8.0, 12.0], [8.0, 16.0], [-8.0, 16.0]]), closed=True),
        VectorInstance(MapClass.CURB, np.array([[-10.03, -30.0], [-10.03, 30.0]])),
        VectorInstance(MapClass.CURB, np.array([[10.07, -30.0], [10.07, 30.0]])),
    ]
    return Scene.create(grid, instances, (0.0, 0.0))


def _blob_masks(seed: int, n: int, shape=(24, 24)):
    """Random binary blobs: unions of a few discs."""
    rng = np.random.default_rng(seed)
    out = []
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    for _ in range(n):
        img = np.zeros(shape, dtype=bool)
        for _ in range(int(rng.integers(1, 4))):
            cy, cx = rng.uniform(3, shape[0] - 3), rng.uniform(3, shape[1] - 3)
            r = rng.uniform(1.5, 6.0)
            img |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        out.append(img.astype(np.uint8))
    return out


@pytest.fixture
def make_blobs():
    return _blob_masks


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full 200-scene corpus runs")
