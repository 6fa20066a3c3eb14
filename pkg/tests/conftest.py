import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from craniotk.grid import GridGeometry, VoxelGrid  # noqa: E402
from craniotk.phantom import PhantomSpec, fit_geometry, generate_phantom  # noqa: E402


def make_mask(data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    data = np.asarray(data, dtype=bool)
    return VoxelGrid(GridGeometry(data.shape, spacing, origin), data)


def random_mask(rng, dims, p=0.3, spacing=(1.0, 1.0, 1.0)):
    return make_mask(rng.random(dims) < p, spacing=spacing)


@pytest.fixture(scope="session")
def phantom_2mm():
    """Default phantom on a 2 mm grid, shared by read-only tests."""
    spec = PhantomSpec()
    geom = fit_geometry([spec], 2.0)
    return generate_phantom(spec, geom)


@pytest.fixture(scope="session")
def phantom_1mm():
    spec = PhantomSpec()
    geom = fit_geometry([spec], 1.0)
    return generate_phantom(spec, geom)
