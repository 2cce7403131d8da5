import numpy as np
import pytest

from fdalab.geometry import build_array, build_grid


@pytest.fixture(scope="session")
def grid():
    return build_grid()


@pytest.fixture(scope="session")
def array():
    return build_array()


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
