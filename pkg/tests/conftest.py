import numpy as np
import pytest

from mfsb.dynamics import LTVSystem, TimeGrid
from mfsb.gaussmix import Gaussian, GaussianMixture


def random_pd(rng, n, jitter=0.3):
    a = rng.normal(size=(n, n))
    return a @ a.T + jitter * np.eye(n)


def random_gaussian(rng, n, mean_scale=2.0, jitter=0.3):
    return Gaussian(mean_scale * rng.normal(size=n), random_pd(rng, n, jitter))


@pytest.fixture(scope="session")
def double_integrator():
    grid = TimeGrid.uniform(101)
    return LTVSystem.constant(A=[[0, 1], [0, 0]], B=[[0], [1]],
                              D=np.zeros((2, 1)), grid=grid)


@pytest.fixture(scope="session")
def brownian_2d():
    """A = 0, B = I2, small noise; the W2-limit regime."""
    grid = TimeGrid.uniform(101)
    return LTVSystem.constant(A=np.zeros((2, 2)), B=np.eye(2),
                              D=1e-2 * np.eye(2), grid=grid)


@pytest.fixture(scope="session")
def two_blob_mixture():
    return GaussianMixture(
        [0.5, 0.5],
        (Gaussian([-1.0, 0.0], 0.25 * np.eye(2)),
         Gaussian([1.0, 0.0], 0.25 * np.eye(2))))
