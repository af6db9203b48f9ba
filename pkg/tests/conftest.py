import numpy as np
import pytest

from conflab.data import make_two_moons, split


@pytest.fixture(scope="session")
def small_moons():
    ds = make_two_moons(300, 0.2, seed=7)
    return split(ds, (180, 60, 60), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
