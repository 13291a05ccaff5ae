import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def standardized_design(rng, n, p):
    """Random design with mean-centred, unit-norm columns."""
    X = rng.standard_normal((n, p))
    X -= X.mean(axis=0)
    X /= np.linalg.norm(X, axis=0)
    return np.asfortranarray(X)


def centred_response(rng, n):
    z = rng.standard_normal(n)
    return z - z.mean()


def random_group_instance(rng, n=30, sizes=(4, 5, 3)):
    sizes = np.asarray(sizes, dtype=np.int64)
    X = standardized_design(rng, n, int(sizes.sum()))
    z = centred_response(rng, n)
    return X, z, sizes
