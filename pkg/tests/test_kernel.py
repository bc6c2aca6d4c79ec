import math

import numpy as np
import pytest

from rfsplat.exceptions import InvalidInputError
from rfsplat.kernel import RbfKernel, gram_matrix


def test_zero_distance_gives_signal_variance():
    k = RbfKernel(0.3, 2.5)
    assert k.evaluate([0.1, 0.2], [0.1, 0.2]) == 2.5


def test_unit_lengthscale_sqrt2_distance():
    k = RbfKernel(1.0, 1.0)
    assert k.evaluate([0.0, 0.0], [1.0, 1.0]) == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert k.evaluate([0.0, 0.0], [1.0, 1.0]) == pytest.approx(0.367879, abs=1e-6)


def test_symmetry_and_bounds(rng):
    k = RbfKernel(0.2, 3.0)
    for _ in range(50):
        a, b = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        assert k.evaluate(a, b) == k.evaluate(b, a)
        assert 0 < k.evaluate(a, b) <= 3.0


def test_monotone_decay():
    k = RbfKernel(0.5, 1.0)
    vals = [k.evaluate([0, 0], [r, 0]) for r in np.linspace(0, 3, 40)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_gram_small_cases():
    k = RbfKernel(0.5, 1.0)
    np.testing.assert_array_equal(gram_matrix(k, [[0.1, 0.2]]), [[1.0]])
    np.testing.assert_array_equal(gram_matrix(k, [[0.1, 0.2], [0.1, 0.2]]), np.ones((2, 2)))
    with pytest.raises(InvalidInputError):
        gram_matrix(k, np.zeros((0, 2)))


def test_gram_matches_elementwise(rng):
    k = RbfKernel(0.4, 1.7)
    X = rng.uniform(-1, 1, (5, 2))
    oracle = np.array([[k.evaluate(a, b) for b in X] for a in X])
    K = gram_matrix(k, X)
    np.testing.assert_allclose(K, oracle, rtol=1e-14)
    np.testing.assert_array_equal(K, K.T)
    np.testing.assert_array_equal(np.diag(K), 1.7)


@pytest.mark.parametrize("T", [2, 20, 200])
def test_gram_psd(rng, T):
    k = RbfKernel(0.3, 2.0)
    K = gram_matrix(k, rng.uniform(-1.5, 1.5, (T, 2)))
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * 2.0


def test_invalid_hyperparameters():
    with pytest.raises(InvalidInputError):
        RbfKernel(0.0, 1.0)
    with pytest.raises(InvalidInputError):
        RbfKernel(1.0, -1.0)
