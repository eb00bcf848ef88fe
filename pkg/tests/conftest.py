import numpy as np
import pytest

from cavmd.grid import make_grid
from cavmd.shin_metiu import ShinMetiuParams


@pytest.fixture(scope="session")
def grid41():
    """The production grid: 41 points, 0.8 bohr spacing."""
    return make_grid(41, 0.8)


@pytest.fixture(scope="session")
def sm():
    return ShinMetiuParams()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
