import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20241017)


@pytest.fixture
def planted():
    """Factory for matrices holding constant blocks on a constant background."""

    def make(shape, blocks, background=0.0):
        A = np.full(shape, background, dtype=np.float64)
        for rows, cols, value in blocks:
            A[np.ix_(rows, cols)] = value
        return A

    return make


@pytest.fixture
def ones_2x2():
    return np.ones((2, 2))
