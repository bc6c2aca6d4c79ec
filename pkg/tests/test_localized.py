import math
from collections import Counter

import numpy as np
import pytest
from sklearn.base import clone

from rfsplat.exceptions import DomainError, InvalidInputError
from rfsplat.geometry import AngularRange
from rfsplat.gp import GpSettings, fit_gp
from rfsplat.localized import LocalizedGPRegressor, RegionPartition, fit_localized

FAST = GpSettings(grid_points=8)


def synthetic(seed, T, domain):
    r = np.random.default_rng(seed)
    X = np.column_stack([
        r.uniform(domain.azimuth_min, domain.azimuth_max, T),
        r.uniform(domain.elevation_min, domain.elevation_max, T),
    ])
    y = 30 + 5 * np.sin(3 * X[:, 0]) + 2 * np.cos(6 * X[:, 1]) + r.normal(0, 0.2, T)
    return X, y


def test_assign_region_examples():
    part = RegionPartition(AngularRange(-math.pi / 2, math.pi / 2, -0.35, 0.35), 6, 2)
    assert part.cell(part.assign_region([-math.pi / 2, -0.35])) == (0, 0)
    assert part.cell(part.assign_region([math.pi / 2, 0.35])) == (5, 1)
    edge = part.azimuth_edges[2]
    assert part.cell(part.assign_region([edge, 0.0]))[0] == 2
    assert part.cell(part.assign_region([np.nextafter(edge, -np.inf), 0.0]))[0] == 1
    assert part.cell(part.assign_region([0.1, 0.0]))[1] == 1


def test_out_of_domain_reports_index_and_value():
    part = RegionPartition()
    X = np.zeros((5, 2))
    X[3] = [0.0, 1.0]
    with pytest.raises(DomainError) as info:
        part.assign(X)
    assert info.value.index == 3
    assert info.value.value == (0.0, 1.0)


def test_partition_rejects_zero_cells():
    with pytest.raises(InvalidInputError):
        RegionPartition(n_azimuth_cells=0)


def test_coverage_fuzz(domain):
    part = RegionPartition(domain, 6, 2)
    r = np.random.default_rng(77)
    X = np.column_stack([
        r.uniform(domain.azimuth_min, domain.azimuth_max, 100_000),
        r.uniform(domain.elevation_min, domain.elevation_max, 100_000),
    ])
    # include every edge crossing exactly
    grid = np.array([(a, e) for a in part.azimuth_edges for e in part.elevation_edges])
    X = np.vstack([X, grid])
    regions = part.assign(X)
    assert np.all((regions >= 0) & (regions < part.n_regions))
    # independent oracle: region bounds contain the point
    i_az, i_el = np.divmod(regions, part.n_elevation_cells)
    az_e, el_e = part.azimuth_edges, part.elevation_edges
    assert np.all(az_e[i_az] <= X[:, 0]) and np.all(X[:, 0] <= az_e[i_az + 1])
    assert np.all(el_e[i_el] <= X[:, 1]) and np.all(X[:, 1] <= el_e[i_el + 1])
    upper_az = (X[:, 0] == az_e[i_az + 1]) & (i_az < part.n_azimuth_cells - 1)
    upper_el = (X[:, 1] == el_e[i_el + 1]) & (i_el < part.n_elevation_cells - 1)
    assert not upper_az.any() and not upper_el.any()


def test_single_region_data_leaves_others_empty(domain):
    part = RegionPartition(domain, 6, 2)
    az0, az1 = part.azimuth_edges[1:3]
    el0, el1 = part.elevation_edges[1:3]
    r = np.random.default_rng(3)
    X = np.column_stack([r.uniform(az0, az1, 20), r.uniform(el0, el1 - 1e-9, 20)])
    model = fit_localized(X, 20 + X[:, 0], part, FAST)
    assert len(model.empty_regions) == 11
    assert 3 not in model.empty_regions
    empty_region = model.empty_regions[0]
    i_az, i_el = part.cell(empty_region)
    x = [(part.azimuth_edges[i_az] + part.azimuth_edges[i_az + 1]) / 2,
         (part.elevation_edges[i_el] + part.elevation_edges[i_el + 1]) / 2]
    mean, var, region, flag = model.predict_local(x)
    assert flag and region == empty_region
    assert mean == pytest.approx(np.mean(20 + X[:, 0]), abs=0)
    assert var == model.template.signal_variance


def test_fit_rejects_empty_scan():
    with pytest.raises(InvalidInputError):
        fit_localized(np.zeros((0, 2)), np.zeros(0))


def test_training_sets_partition_the_input(domain):
    X, y = synthetic(5, 300, domain)
    part = RegionPartition(domain, 6, 2)
    model = fit_localized(X, y, part, FAST)
    pieces = []
    for r, post in enumerate(model.posteriors):
        if post is None:
            continue
        Xi = post.dataset.inputs
        for row in Xi:
            # re-assign independently via edge comparison
            i_az = min(int(np.sum(part.azimuth_edges[1:-1] <= row[0])), 5)
            i_el = min(int(np.sum(part.elevation_edges[1:-1] <= row[1])), 1)
            assert i_az * 2 + i_el == r
        pieces.extend(map(tuple, Xi))
    assert Counter(pieces) == Counter(map(tuple, X))


def test_single_region_equals_conventional(domain):
    X, y = synthetic(9, 150, domain)
    Xq, _ = synthetic(10, 400, domain)
    model = fit_localized(X, y, RegionPartition(domain, 1, 1), FAST)
    glob = fit_gp(X, y, FAST)
    assert model.posteriors[0].kernel == glob.kernel
    m_loc = model.predict_batch(Xq)
    m_glob, v_glob = glob.predict(Xq)
    np.testing.assert_allclose(m_loc.mean, m_glob, atol=1e-10, rtol=0)
    np.testing.assert_allclose(m_loc.variance, v_glob, atol=1e-10, rtol=0)
    assert model.predict_local(Xq[0])[:2] == pytest.approx((m_glob[0], v_glob[0]), abs=1e-10)


def test_locality(domain):
    part = RegionPartition(domain, 6, 2)
    X, y = synthetic(17, 240, domain)
    Xq, _ = synthetic(18, 2000, domain)
    base = fit_localized(X, y, part, FAST).predict_batch(Xq)
    regions = part.assign(X)
    target = regions[0]
    y2 = y.copy()
    y2[0] += 7.5
    moved = fit_localized(X, y2, part, FAST).predict_batch(Xq)
    other = base.region != target
    np.testing.assert_array_equal(moved.mean[other], base.mean[other])
    np.testing.assert_array_equal(moved.variance[other], base.variance[other])
    assert np.any(moved.mean[~other] != base.mean[~other])


def test_single_observation_region_uses_template(domain):
    part = RegionPartition(domain, 2, 1)
    X = np.array([[-0.5, 0.0], [0.5, 0.0], [0.6, 0.1], [0.7, -0.1]])
    y = np.array([10.0, 20.0, 21.0, 22.0])
    model = fit_localized(X, y, part, GpSettings(lengthscale=0.2, grid_points=4))
    assert model.posteriors[0].kernel == model.template
    assert model.template.lengthscale == 0.2
    assert model.posteriors[0].predict_one([-0.5, 0.0])[0] == pytest.approx(10.0, abs=0.5)


def test_batch_of_one_and_shuffle(domain):
    X, y = synthetic(23, 200, domain)
    Xq, _ = synthetic(24, 300, domain)
    model = fit_localized(X, y, RegionPartition(domain), FAST)
    full = model.predict_batch(Xq)
    one = model.predict_batch(Xq[7:8])
    assert model.predict_local(Xq[7]) == (one.mean[0], one.variance[0], full.region[7], False)
    # BLAS may round differently with batch size; agreement is to the last few ulps
    assert one.mean[0] == pytest.approx(full.mean[7], rel=1e-13)
    assert one.variance[0] == pytest.approx(full.variance[7], rel=1e-9, abs=1e-12)
    perm = np.random.default_rng(0).permutation(300)
    shuffled = model.predict_batch(Xq[perm])
    np.testing.assert_array_equal(shuffled.region, full.region[perm])
    np.testing.assert_allclose(shuffled.mean, full.mean[perm], rtol=1e-13, atol=0)
    np.testing.assert_allclose(shuffled.variance, full.variance[perm], rtol=1e-9, atol=1e-12)


def test_parallel_equals_sequential(domain):
    X, y = synthetic(31, 240, domain)
    Xq, _ = synthetic(32, 10_000, domain)
    seq_model = fit_localized(X, y, RegionPartition(domain), FAST, n_jobs=1)
    par_model = fit_localized(X, y, RegionPartition(domain), FAST, n_jobs=4)
    a = seq_model.predict_batch(Xq, n_jobs=1)
    b = par_model.predict_batch(Xq, n_jobs=4)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.variance, b.variance)
    np.testing.assert_array_equal(a.region, b.region)


def test_batch_domain_error_index(domain):
    X, y = synthetic(1, 50, domain)
    model = fit_localized(X, y, RegionPartition(domain), FAST)
    Xq = np.zeros((4, 2))
    Xq[2, 0] = 3.0
    with pytest.raises(DomainError) as info:
        model.predict_batch(Xq)
    assert info.value.index == 2


def test_regressor_estimator_api(domain):
    X, y = synthetic(41, 200, domain)
    est = LocalizedGPRegressor(grid_points=8, n_azimuth_cells=3)
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()
    est.fit(X, y)
    mean, var = est.predict(X[:10], return_var=True)
    assert mean.shape == var.shape == (10,)
    assert est.predict_detailed(X[:10]).region.max() < 6
    assert est.score(X, y) > 0.5
    est.set_params(domain=(-1.6, 1.6, -0.4, 0.4))
    assert est.fit(X, y).model_.partition.domain.azimuth_max == 1.6
