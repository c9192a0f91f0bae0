import numpy as np
import pytest

from tlvi.data import Dataset
from tlvi.sim import DgpSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def linear_data():
    """Y = 5 X + noise with corr(X, Z) = 0.5, n = 500."""
    return generate(DgpSpec(n=500, rho=0.5, seed=2024))


def make_dataset(y, x, z=None):
    n = len(y)
    z = np.zeros((n, 0)) if z is None else z
    return Dataset(np.asarray(y, float), np.asarray(x, float), z)
