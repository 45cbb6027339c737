import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from bonerecon.geom import TriMesh
from bonerecon.primitives import box, icosphere

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))
torch.set_num_threads(1)


@pytest.fixture
def cube():
    return box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))


@pytest.fixture
def sphere():
    return icosphere(3, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tetra():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriMesh(v, f)
