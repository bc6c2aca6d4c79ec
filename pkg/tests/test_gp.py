import math
import warnings

import numpy as np
import pytest
from sklearn.base import clone

from rfsplat.exceptions import DegenerateDataError, DegenerateFitWarning, InvalidInputError
from rfsplat.gp import (
    ExactGPRegressor,
    GpDataset,
    GpSettings,
    _factorize,
    fit_gp,
    fit_posterior,
    log_marginal_likelihood,
    optimize_lengthscale,
    predict_prior,
)
from rfsplat.kernel import RbfKernel


def brute_force_posterior(X, y, kernel, noise, Xq):
    """Closed-form posterior with an explicit matrix inverse and no factorization."""
    offset = y.mean()
    K = np.array([[kernel.evaluate(a, b) for b in X] for a in X])
    Kinv = np.linalg.inv(K + noise * np.eye(len(X)))
    mean, var = [], []
    for x in Xq:
        k = np.array([kernel.evaluate(a, x) for a in X])
        mean.append(offset + k @ Kinv @ (y - offset))
        var.append(kernel.signal_variance - k @ Kinv @ k)
    return np.array(mean), np.array(var)


def brute_force_lml(X, y, kernel, noise):
    yc = y - y.mean()
    K = np.array([[kernel.evaluate(a, b) for b in X] for a in X]) + noise * np.eye(len(X))
    return -0.5 * yc @ np.linalg.inv(K) @ yc - 0.5 * math.log(np.linalg.det(K)) - 0.5 * len(X) * math.log(2 * math.pi)


def random_instance(seed, T):
    r = np.random.default_rng(seed)
    X = r.uniform(-0.5, 0.5, (T, 2))
    y = 20 + 3 * np.sin(4 * X[:, 0]) + r.normal(0, 0.3, T)
    return X, y, RbfKernel(r.uniform(0.1, 0.5), r.uniform(0.5, 4.0)), r.uniform(0.01, 0.2)


def test_noiseless_single_point_interpolates():
    post = fit_posterior(GpDataset([[0.1, 0.2]], [12.5], 0.0), RbfKernel(0.3, 1.0))
    mean, var = post.predict_one([0.1, 0.2])
    assert abs(mean - 12.5) < 1e-10
    assert var <= 1e-6


def test_fit_rejects_empty():
    with pytest.raises(InvalidInputError):
        fit_posterior(GpDataset(np.zeros((0, 2)), [], 0.04), RbfKernel())


def test_weights_match_dense_solve():
    X, y, k, noise = random_instance(7, 30)
    post = fit_posterior(GpDataset(X, y, noise), k)
    K = np.array([[k.evaluate(a, b) for b in X] for a in X]) + noise * np.eye(30)
    np.testing.assert_allclose(post.weights, np.linalg.inv(K) @ (y - y.mean()), atol=1e-8, rtol=1e-8)
    A = K + post.jitter * np.eye(30)
    assert np.linalg.norm(post.chol @ post.chol.T - A) <= 1e-8 * np.linalg.norm(A)
    assert np.linalg.norm(K @ post.weights - (y - y.mean())) <= 1e-8 * np.linalg.norm(y - y.mean())


def test_prior_reversion_far_from_data():
    X, y, k, noise = random_instance(3, 10)
    k = RbfKernel(0.05, 2.0)
    post = fit_posterior(GpDataset(X, y, noise), k)
    mean, var = post.predict_one([3.0, 1.5])
    assert abs(mean - y.mean()) < 1e-6
    assert abs(var - 2.0) < 1e-6


def test_noiseless_interpolation_at_training_inputs():
    X, y, k, _ = random_instance(11, 12)
    post = fit_posterior(GpDataset(X, y, 0.0), k)
    mean, var = post.predict(X)
    np.testing.assert_allclose(mean, y, atol=1e-4)
    assert np.all(var <= 1e-6)


def test_predict_matches_brute_force_t40():
    X, y, k, noise = random_instance(2024, 40)
    Xq = np.random.default_rng(5).uniform(-0.7, 0.7, (25, 2))
    mean, var = fit_posterior(GpDataset(X, y, noise), k).predict(Xq)
    m_ref, v_ref = brute_force_posterior(X, y, k, noise, Xq)
    np.testing.assert_allclose(mean, m_ref, atol=1e-8, rtol=0)
    np.testing.assert_allclose(var, v_ref, atol=1e-8, rtol=0)


def test_predict_prior_examples():
    m, v = predict_prior(RbfKernel(0.2, 1.0), [[0.0, 0.0]], 0.0)
    assert (m[0], v[0]) == (0.0, 1.0)
    m, v = predict_prior(RbfKernel(0.2, 4.0), [[0.3, -0.1], [1.0, 0.2]], 12.5)
    np.testing.assert_array_equal(m, 12.5)
    np.testing.assert_array_equal(v, 4.0)


def test_lml_scalar_case():
    s = 1.5 + 0.3
    got = log_marginal_likelihood(GpDataset([[0.0, 0.0]], [7.0], 0.3), RbfKernel(0.5, 1.5))
    # centering makes the single residual zero
    expected = -0.5 * math.log(s) - 0.5 * math.log(2 * math.pi)
    assert got == pytest.approx(expected, abs=1e-9)


def test_lml_matches_dense_oracle():
    X, y, k, noise = random_instance(99, 20)
    got = log_marginal_likelihood(GpDataset(X, y, noise), k)
    assert got == pytest.approx(brute_force_lml(X, y, k, noise), abs=1e-8)


def test_lml_decreases_for_large_noise():
    X, y, k, _ = random_instance(42, 15)
    vals = [log_marginal_likelihood(GpDataset(X, y, n), k) for n in (10.0, 100.0, 1e3, 1e4, 1e5)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_lengthscale_recovery():
    r = np.random.default_rng(0)
    X = r.uniform(0, 1, (200, 2))
    true = RbfKernel(0.1, 1.0)
    K = true(X) + 1e-8 * np.eye(200)
    f = np.linalg.cholesky(K) @ r.standard_normal(200)
    y = f + r.normal(0, 0.01, 200)
    found = optimize_lengthscale(GpDataset(X, y, 1e-4), RbfKernel(0.5, 1.0), (1e-3, 2.0), 32)
    assert 0.05 <= found.lengthscale <= 0.2


def test_optimum_beats_every_grid_candidate():
    X, y, _, noise = random_instance(8, 25)
    data = GpDataset(X, y, noise)
    template = RbfKernel(0.1, float(np.var(y)))
    best = optimize_lengthscale(data, template, (1e-3, 2.0), 12)
    best_val = log_marginal_likelihood(data, best)
    for ell in np.exp(np.linspace(math.log(1e-3), math.log(2.0), 12)):
        assert best_val >= log_marginal_likelihood(data, template.with_params(lengthscale=ell)) - 1e-9


def test_constant_targets_prefer_largest_lengthscale():
    X = np.random.default_rng(1).uniform(-1, 1, (10, 2))
    best = optimize_lengthscale(GpDataset(X, np.full(10, 5.0), 0.04), RbfKernel(0.1, 1e-6), (1e-3, 2.0), 8)
    assert best.lengthscale == pytest.approx(2.0, rel=1e-3)


def test_single_grid_point_returns_it():
    X, y, _, _ = random_instance(4, 6)
    got = optimize_lengthscale(GpDataset(X, y, 0.04), RbfKernel(0.1, 1.0), (0.3, 0.9), 1)
    assert got.lengthscale == 0.3


def test_too_few_points_warns_and_keeps_template():
    template = RbfKernel(0.123, 2.0)
    with pytest.warns(DegenerateFitWarning):
        got = optimize_lengthscale(GpDataset([[0.0, 0.0]], [1.0], 0.04), template)
    assert got is template


def test_coincident_inputs_factorize_with_jitter():
    X = np.zeros((5, 2))
    post = fit_posterior(GpDataset(X, np.arange(5.0), 0.0), RbfKernel(0.3, 1.0))
    assert 1e-10 <= post.jitter <= 1e-4
    mean, var = post.predict_one([0.0, 0.0])
    assert np.isfinite(mean) and 0.0 <= var <= 1e-6


def test_jitter_escalates_until_failure():
    # indefinite matrix: no jitter within the cap can rescue it
    K = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(DegenerateDataError) as info:
        _factorize(K, 0.0, 1.0)
    assert info.value.jitter == pytest.approx(1e-4)
    # mildly indefinite: rescued by an intermediate jitter step
    K = np.array([[1.0, 1.0 + 1e-7], [1.0 + 1e-7, 1.0]])
    _, jitter = _factorize(K, 0.0, 1.0)
    assert 1e-7 <= jitter <= 1e-4


def test_variance_bounds_and_monotone_in_data():
    X, y, k, noise = random_instance(12, 20)
    Xq = np.random.default_rng(13).uniform(-1, 1, (200, 2))
    post = fit_posterior(GpDataset(X, y, noise), k)
    _, var = post.predict(Xq)
    assert np.all(var >= 0) and np.all(var <= k.signal_variance + 1e-8)
    for x in Xq[:10]:
        bigger = fit_posterior(GpDataset(np.vstack([X, x]), np.append(y, y.mean()), noise), k)
        assert bigger.predict_one(x)[1] <= post.predict_one(x)[1] + 1e-8


def test_permutation_invariance():
    X, y, k, noise = random_instance(21, 30)
    Xq = np.random.default_rng(22).uniform(-0.6, 0.6, (50, 2))
    perm = np.random.default_rng(23).permutation(30)
    a = fit_posterior(GpDataset(X, y, noise), k).predict(Xq)
    b = fit_posterior(GpDataset(X[perm], y[perm], noise), k).predict(Xq)
    np.testing.assert_allclose(a[0], b[0], atol=1e-10, rtol=0)
    np.testing.assert_allclose(a[1], b[1], atol=1e-10, rtol=0)


def test_estimator_api_round_trip():
    X, y, _, _ = random_instance(30, 40)
    est = ExactGPRegressor(noise_variance=0.09, grid_points=8)
    assert clone(est).get_params() == est.get_params()
    est.fit(X, y)
    mean, var = est.predict(X[:5], return_var=True)
    assert mean.shape == var.shape == (5,)
    assert est.score(X, y) > 0.5
    ref = fit_gp(X, y, GpSettings(noise_variance=0.09, grid_points=8))
    np.testing.assert_array_equal(est.predict(X[:5]), ref.predict(X[:5])[0])


def test_estimator_rejects_bad_shapes():
    with pytest.raises(InvalidInputError):
        ExactGPRegressor().fit(np.zeros((4, 3)), np.zeros(4))
    with pytest.raises(InvalidInputError):
        ExactGPRegressor().fit(np.zeros((4, 2)), np.zeros(3))


def test_fixed_lengthscale_skips_search():
    X, y, _, _ = random_instance(31, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        est = ExactGPRegressor(lengthscale=0.25, optimize=False).fit(X, y)
    assert est.kernel_.lengthscale == 0.25
