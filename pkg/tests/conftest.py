"""Shared fixtures and small data builders for the test suite."""

import numpy as np
import pytest

from pwls.numerics import Dataset


def gaussian_dataset(n, p, seed=0, noise=1.0, beta=None):
    """Well-conditioned random regression data with known coefficients."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    if beta is None:
        beta = np.ones(p)
    y = X @ beta + noise * rng.normal(size=n)
    return Dataset(X=X, y=y)


def planted_dataset(n, p, k, shift=8.0, seed=0, noise=1.0):
    """Gaussian data with the first k responses shifted upward.

    Returns (Dataset, truth) where truth is the planted index array.
    """
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X @ np.ones(p) + noise * rng.normal(size=n)
    y[:k] += shift
    return Dataset(X=X, y=y), np.arange(k)


@pytest.fixture
def slope_fixture():
    """Five points on a unit slope with the last response grossly shifted."""
    X = np.arange(1.0, 6.0).reshape(-1, 1)
    y = np.array([1.0, 2.0, 3.0, 4.0, 50.0])
    return Dataset(X=X, y=y)
