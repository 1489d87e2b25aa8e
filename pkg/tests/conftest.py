import numpy as np
import pytest

from tpmg.banded import BandedMatrix, BandPattern

COPRIME = [(1, 1), (2, 1), (1, 2), (3, 1), (1, 3), (3, 2), (2, 3)]


def random_pattern(rng, n_row=None, n_col=None, slopes=None):
    a, b = slopes if slopes is not None else COPRIME[rng.integers(len(COPRIME))]
    n_row = int(rng.integers(1, 17)) if n_row is None else n_row
    n_col = int(rng.integers(1, 17)) if n_col is None else n_col
    return BandPattern(a, b, int(rng.integers(0, 5)), int(rng.integers(0, 5)), n_row, n_col)


def random_dense(rng, pattern, n_columns):
    """Dense column blocks with random values on admissible entries only."""
    blocks = rng.standard_normal((n_columns, pattern.n_row, pattern.n_col))
    blocks *= pattern.mask()[None]
    return blocks


def random_banded(rng, pattern, n_columns=3):
    dense = random_dense(rng, pattern, n_columns)
    return BandedMatrix.from_dense(pattern, dense), dense


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
