"""Localized GP: one independent exact GP per cell of an angular grid.

Each cell conditions only on the observations that fall inside it, so a
fit costs O(sum_r T_r^3) instead of O(T^3), and cells can be fitted and
queried concurrently. Cells are half-open ``[lo, hi)`` on both axes except
for the closed upper edge of the domain, which gives an exact tiling.
Predictions are not blended across cell borders.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_angles, check_angles_targets
from .exceptions import DomainError, InvalidInputError
from .geometry import AngularRange
from .gp import (
    DEFAULT_NOISE_VARIANCE,
    GpDataset,
    GpSettings,
    empirical_signal_variance,
    fit_gp,
    fit_posterior,
)
from .kernel import RbfKernel

__all__ = [
    "LocalizedGPRegressor",
    "LocalizedGpModel",
    "LocalPrediction",
    "RegionPartition",
    "fit_localized",
]


@dataclass(frozen=True)
class RegionPartition:
    """Uniform azimuth x elevation grid over ``domain``."""

    domain: AngularRange = field(default_factory=AngularRange.default)
    n_azimuth_cells: int = 6
    n_elevation_cells: int = 2

    def __post_init__(self):
        if int(self.n_azimuth_cells) < 1 or int(self.n_elevation_cells) < 1:
            raise InvalidInputError("partition needs at least one cell per axis")

    @property
    def n_regions(self):
        return self.n_azimuth_cells * self.n_elevation_cells

    @property
    def azimuth_edges(self):
        d = self.domain
        return np.linspace(d.azimuth_min, d.azimuth_max, self.n_azimuth_cells + 1)

    @property
    def elevation_edges(self):
        d = self.domain
        return np.linspace(d.elevation_min, d.elevation_max, self.n_elevation_cells + 1)

    def cell(self, region):
        """(azimuth index, elevation index) of a flat region index."""
        return divmod(int(region), self.n_elevation_cells)

    def region_of_cell(self, i_az, i_el):
        return i_az * self.n_elevation_cells + i_el

    def assign(self, X):
        """Flat region index for every row of ``X``.

        Raises DomainError naming the first offending row.
        """
        X = check_angles(X, allow_empty=True)
        inside = self.domain.contains(X) if len(X) else np.ones(0, dtype=bool)
        if not np.all(inside):
            i = int(np.flatnonzero(~inside)[0])
            raise DomainError(
                f"query {i} at (az={X[i, 0]!r}, el={X[i, 1]!r}) is outside the partition domain",
                value=tuple(X[i]),
                index=i,
            )
        i_az = np.searchsorted(self.azimuth_edges, X[:, 0], side="right") - 1
        i_el = np.searchsorted(self.elevation_edges, X[:, 1], side="right") - 1
        np.clip(i_az, 0, self.n_azimuth_cells - 1, out=i_az)
        np.clip(i_el, 0, self.n_elevation_cells - 1, out=i_el)
        return i_az * self.n_elevation_cells + i_el

    def assign_region(self, x):
        return int(self.assign(np.reshape(np.asarray(x, dtype=float), (1, 2)))[0])


class LocalPrediction(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray
    region: np.ndarray
    empty_region: np.ndarray


@dataclass(frozen=True, eq=False)
class LocalizedGpModel:
    """Fitted partition; ``posteriors[r]`` is None for regions without data."""

    partition: RegionPartition
    posteriors: tuple
    template: RbfKernel
    mean_offset: float
    settings: GpSettings

    @property
    def n_regions(self):
        return len(self.posteriors)

    @property
    def empty_regions(self):
        return [r for r, p in enumerate(self.posteriors) if p is None]

    def predict_local(self, x):
        """Route one query to its region; returns (mean, variance, region, empty flag)."""
        pred = self.predict_batch(np.reshape(np.asarray(x, dtype=float), (1, 2)))
        return (
            float(pred.mean[0]),
            float(pred.variance[0]),
            int(pred.region[0]),
            bool(pred.empty_region[0]),
        )

    def predict_batch(self, X, n_jobs=None):
        """Predict many queries, grouping them by region.

        Each region always receives its full query subset in input order, so
        the output does not depend on ``n_jobs``.
        """
        X = check_angles(X, allow_empty=True)
        regions = self.partition.assign(X)
        n = X.shape[0]
        mean = np.empty(n)
        var = np.empty(n)
        empty = np.zeros(n, dtype=bool)
        groups = [(r, np.flatnonzero(regions == r)) for r in np.unique(regions)]

        def work(item):
            r, idx = item
            post = self.posteriors[r]
            if post is None:
                return r, idx, None
            return r, idx, post.predict(X[idx])

        for r, idx, out in _map(work, groups, n_jobs):
            if out is None:
                mean[idx] = self.mean_offset
                var[idx] = self.template.signal_variance
                empty[idx] = True
            else:
                mean[idx], var[idx] = out
        return LocalPrediction(mean, var, regions, empty)


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    workers = None if n_jobs == -1 else int(n_jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def fit_localized(X, y, partition=None, settings=None, n_jobs=None):
    """Fit one GP per region of ``partition`` on that region's observations.

    Regions with two or more observations get their own signal variance and
    optimized lengthscale. A single observation is conditioned with the
    template kernel; empty regions fall back to the prior.
    """
    X, y = check_angles_targets(X, y)
    partition = partition or RegionPartition()
    settings = settings or GpSettings()
    regions = partition.assign(X)
    sf2 = settings.signal_variance
    if sf2 is None:
        sf2 = empirical_signal_variance(y)
    template = RbfKernel(settings.lengthscale, sf2)

    def work(r):
        idx = np.flatnonzero(regions == r)
        if idx.size == 0:
            return None
        if idx.size == 1:
            return fit_posterior(GpDataset(X[idx], y[idx], settings.noise_variance), template)
        return fit_gp(X[idx], y[idx], settings)

    posteriors = tuple(_map(work, list(range(partition.n_regions)), n_jobs))
    if all(p is None for p in posteriors):
        raise InvalidInputError("every region is empty")
    return LocalizedGpModel(partition, posteriors, template, float(np.mean(y)), settings)


class LocalizedGPRegressor(RegressorMixin, BaseEstimator):
    """Depth regressor with an independent GP per angular grid cell.

    Parameters
    ----------
    domain : AngularRange or tuple or None
        Partitioned domain; a tuple is read as radians
        ``(az_min, az_max, el_min, el_max)``. ``None`` means +-90 deg azimuth
        and +-20 deg elevation.
    n_azimuth_cells, n_elevation_cells : int
        Grid resolution; ``1, 1`` reproduces :class:`ExactGPRegressor`.
    n_jobs : int or None
        Threads used for region fits and batched prediction.

    The remaining parameters match :class:`~rfsplat.gp.ExactGPRegressor` and
    apply to every region.
    """

    def __init__(
        self,
        domain=None,
        n_azimuth_cells=6,
        n_elevation_cells=2,
        noise_variance=DEFAULT_NOISE_VARIANCE,
        lengthscale=0.1,
        signal_variance=None,
        lengthscale_bounds=(1e-3, 2.0),
        grid_points=32,
        optimize=True,
        n_jobs=None,
    ):
        self.domain = domain
        self.n_azimuth_cells = n_azimuth_cells
        self.n_elevation_cells = n_elevation_cells
        self.noise_variance = noise_variance
        self.lengthscale = lengthscale
        self.signal_variance = signal_variance
        self.lengthscale_bounds = lengthscale_bounds
        self.grid_points = grid_points
        self.optimize = optimize
        self.n_jobs = n_jobs

    def _partition(self):
        domain = self.domain
        if domain is None:
            domain = AngularRange.default()
        elif not isinstance(domain, AngularRange):
            domain = AngularRange(*domain)
        return RegionPartition(domain, int(self.n_azimuth_cells), int(self.n_elevation_cells))

    def fit(self, X, y):
        settings = GpSettings(
            noise_variance=self.noise_variance,
            lengthscale=self.lengthscale,
            signal_variance=self.signal_variance,
            lengthscale_bounds=tuple(self.lengthscale_bounds),
            grid_points=self.grid_points,
            optimize=self.optimize,
        )
        self.model_ = fit_localized(X, y, self._partition(), settings, n_jobs=self.n_jobs)
        self.n_features_in_ = 2
        return self

    def predict(self, X, return_var=False):
        check_is_fitted(self, "model_")
        pred = self.model_.predict_batch(X, n_jobs=self.n_jobs)
        if return_var:
            return pred.mean, pred.variance
        return pred.mean

    def predict_detailed(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_batch(X, n_jobs=self.n_jobs)
