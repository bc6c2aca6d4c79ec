"""Exact Gaussian-process regression with a cached Cholesky factor.

Targets are centered by their empirical mean before conditioning, so the
posterior reverts to the data mean (not to zero depth) far from the
observations. Hyperparameter selection optimizes only the lengthscale; the
signal variance defaults to the empirical variance of the centered targets.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_angles, check_angles_targets
from .exceptions import DegenerateDataError, DegenerateFitWarning, InvalidInputError
from .kernel import RbfKernel, cross_covariance, gram_matrix, squared_distances

__all__ = [
    "ExactGPRegressor",
    "GpDataset",
    "GpPosterior",
    "GpSettings",
    "empirical_signal_variance",
    "fit_gp",
    "fit_posterior",
    "log_marginal_likelihood",
    "optimize_lengthscale",
    "predict_prior",
]

DEFAULT_NOISE_VARIANCE = 0.04
SIGNAL_VARIANCE_FLOOR = 1e-6
JITTER_START = 1e-10
JITTER_MAX = 1e-4
_PREDICT_CHUNK = 4096
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GpDataset:
    inputs: np.ndarray
    targets: np.ndarray
    noise_variance: float = DEFAULT_NOISE_VARIANCE

    def __post_init__(self):
        X, y = check_angles_targets(self.inputs, self.targets, allow_empty=True)
        if not (np.isfinite(self.noise_variance) and self.noise_variance >= 0):
            raise InvalidInputError("noise_variance must be finite and >= 0")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.targets.shape[0]


@dataclass(frozen=True)
class GpSettings:
    """Hyperparameter handling shared by the global and per-region fits."""

    noise_variance: float = DEFAULT_NOISE_VARIANCE
    lengthscale: float = 0.1
    signal_variance: float | None = None
    lengthscale_bounds: tuple = (1e-3, 2.0)
    grid_points: int = 32
    optimize: bool = True

    def __post_init__(self):
        lo, hi = self.lengthscale_bounds
        if not 0 < lo < hi:
            raise InvalidInputError("lengthscale_bounds must satisfy 0 < min < max")
        if int(self.grid_points) < 1:
            raise InvalidInputError("grid_points must be >= 1")
        if not (np.isfinite(self.noise_variance) and self.noise_variance >= 0):
            raise InvalidInputError("noise_variance must be finite and >= 0")
        if self.signal_variance is not None and not self.signal_variance > 0:
            raise InvalidInputError("signal_variance must be > 0")
        if not self.lengthscale > 0:
            raise InvalidInputError("lengthscale must be > 0")


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """Fitted GP; immutable and safe to query from several threads."""

    dataset: GpDataset
    kernel: RbfKernel
    mean_offset: float
    chol: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    jitter: float = 0.0

    def predict(self, X):
        """Posterior mean and variance at each row of ``X``."""
        X = check_angles(X)
        n = X.shape[0]
        mean = np.empty(n)
        var = np.empty(n)
        for start in range(0, n, _PREDICT_CHUNK):
            stop = min(start + _PREDICT_CHUNK, n)
            Ks = cross_covariance(self.kernel, X[start:stop], self.dataset.inputs)
            mean[start:stop] = self.mean_offset + Ks @ self.weights
            v = linalg.solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
            var[start:stop] = self.kernel.signal_variance - np.einsum("ij,ij->j", v, v)
        np.maximum(var, 0.0, out=var)
        return mean, var

    def predict_one(self, x):
        mean, var = self.predict(np.reshape(np.asarray(x, dtype=float), (1, 2)))
        return float(mean[0]), float(var[0])


def empirical_signal_variance(y):
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return 1.0
    return max(float(np.var(y - y.mean())), SIGNAL_VARIANCE_FLOOR)


def _factorize(K, noise_variance, signal_variance):
    """Cholesky of K + noise*I, adding diagonal jitter only if it fails.

    The first attempt is unjittered so that well-conditioned problems solve
    the exact system; after that jitter escalates x10 from JITTER_START*sf2
    to JITTER_MAX*sf2.
    """
    A = K.copy()
    n = A.shape[0]
    idx = np.diag_indices(n)
    base = np.diag(K) + noise_variance
    jitter = 0.0
    while True:
        A[idx] = base + jitter
        try:
            L = linalg.cholesky(A, lower=True, check_finite=False)
        except linalg.LinAlgError:
            L = None
        if L is not None and np.all(np.isfinite(L)):
            return L, jitter
        if jitter >= JITTER_MAX * signal_variance * (1 - 1e-12):
            raise DegenerateDataError(
                f"Cholesky factorization failed at jitter {jitter:.3g}", jitter=jitter
            )
        jitter = JITTER_START * signal_variance if jitter == 0.0 else jitter * 10.0


def fit_posterior(data, kernel):
    """Factorize K + noise*I for the given kernel and cache the weights."""
    if len(data) == 0:
        raise InvalidInputError("fit needs at least one observation; use predict_prior")
    offset = float(np.mean(data.targets))
    centered = data.targets - offset
    K = gram_matrix(kernel, data.inputs)
    L, jitter = _factorize(K, data.noise_variance, kernel.signal_variance)
    weights = linalg.cho_solve((L, True), centered, check_finite=False)
    return GpPosterior(data, kernel, offset, L, weights, jitter)


def predict_prior(kernel, X, mean_offset=0.0):
    """Prior mean and variance; used where no observations are available."""
    X = check_angles(X)
    return np.full(X.shape[0], float(mean_offset)), kernel.diag(X)


def log_marginal_likelihood(data, kernel):
    """Gaussian evidence of the centered targets under ``kernel``."""
    if len(data) == 0:
        raise InvalidInputError("log marginal likelihood needs T >= 1")
    return _lml(data, kernel, squared_distances(data.inputs, data.inputs))


def _lml(data, kernel, sqdist):
    centered = data.targets - np.mean(data.targets)
    K = kernel.signal_variance * np.exp(sqdist * (-0.5 / kernel.lengthscale**2))
    L, _ = _factorize(K, data.noise_variance, kernel.signal_variance)
    alpha = linalg.cho_solve((L, True), centered, check_finite=False)
    n = centered.shape[0]
    return float(
        -0.5 * centered @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def _better(value, ell, best_value, best_ell):
    # Ties (to rounding) go to the larger lengthscale.
    tol = 1e-12 * max(1.0, abs(best_value))
    if value > best_value + tol:
        return True
    return abs(value - best_value) <= tol and ell > best_ell


def optimize_lengthscale(data, kernel_template, bounds=(1e-3, 2.0), grid_points=32):
    """Maximize the log marginal likelihood over the lengthscale.

    A log-uniform grid locates the best bracket, which golden-section search
    then refines. The returned kernel scores at least as well as every grid
    candidate.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not 0 < lo < hi:
        raise InvalidInputError("bounds must satisfy 0 < min < max")
    grid_points = int(grid_points)
    if grid_points < 1:
        raise InvalidInputError("grid_points must be >= 1")
    if len(data) < 2:
        warnings.warn(
            "fewer than two observations; lengthscale left at its template value",
            DegenerateFitWarning,
            stacklevel=2,
        )
        return kernel_template

    sqdist = squared_distances(data.inputs, data.inputs)

    def score(log_ell):
        return _lml(data, kernel_template.with_params(lengthscale=math.exp(log_ell)), sqdist)

    if grid_points == 1:
        return kernel_template.with_params(lengthscale=lo)

    log_grid = np.linspace(math.log(lo), math.log(hi), grid_points)
    values = [score(g) for g in log_grid]
    best = 0
    for i in range(1, grid_points):
        if _better(values[i], log_grid[i], values[best], log_grid[best]):
            best = i
    best_log, best_value = log_grid[best], values[best]

    a = log_grid[max(best - 1, 0)]
    b = log_grid[min(best + 1, grid_points - 1)]
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = score(c), score(d)
    while b - a > 1e-3:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = score(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = score(d)
    for log_ell, value in ((c, fc), (d, fd)):
        if _better(value, log_ell, best_value, best_log):
            best_log, best_value = log_ell, value
    return kernel_template.with_params(lengthscale=math.exp(best_log))


def fit_gp(X, y, settings, template=None):
    """Select hyperparameters per ``settings`` and return the fitted posterior.

    ``template`` overrides the starting kernel; by default the signal
    variance is the empirical variance of ``y``.
    """
    data = GpDataset(X, y, settings.noise_variance)
    if template is None:
        sf2 = settings.signal_variance
        if sf2 is None:
            sf2 = empirical_signal_variance(data.targets)
        template = RbfKernel(settings.lengthscale, sf2)
    kernel = template
    if settings.optimize:
        kernel = optimize_lengthscale(
            data, template, settings.lengthscale_bounds, settings.grid_points
        )
    return fit_posterior(data, kernel)


class ExactGPRegressor(RegressorMixin, BaseEstimator):
    """Conventional (global) GP depth regressor over angular inputs.

    Parameters
    ----------
    noise_variance : float
        Observation noise variance in m^2.
    lengthscale : float
        Starting lengthscale in radians; kept as-is when ``optimize=False``.
    signal_variance : float or None
        Prior variance; ``None`` uses the empirical variance of the targets.
    lengthscale_bounds : tuple
        Search interval for the lengthscale.
    grid_points : int
        Size of the log-uniform search grid.
    optimize : bool
        Whether to maximize the marginal likelihood over the lengthscale.
    """

    def __init__(
        self,
        noise_variance=DEFAULT_NOISE_VARIANCE,
        lengthscale=0.1,
        signal_variance=None,
        lengthscale_bounds=(1e-3, 2.0),
        grid_points=32,
        optimize=True,
    ):
        self.noise_variance = noise_variance
        self.lengthscale = lengthscale
        self.signal_variance = signal_variance
        self.lengthscale_bounds = lengthscale_bounds
        self.grid_points = grid_points
        self.optimize = optimize

    def _settings(self):
        return GpSettings(
            noise_variance=self.noise_variance,
            lengthscale=self.lengthscale,
            signal_variance=self.signal_variance,
            lengthscale_bounds=tuple(self.lengthscale_bounds),
            grid_points=self.grid_points,
            optimize=self.optimize,
        )

    def fit(self, X, y):
        X, y = check_angles_targets(X, y)
        self.posterior_ = fit_gp(X, y, self._settings())
        self.kernel_ = self.posterior_.kernel
        self.n_features_in_ = 2
        return self

    def predict(self, X, return_var=False):
        check_is_fitted(self, "posterior_")
        mean, var = self.posterior_.predict(X)
        if return_var:
            return mean, var
        return mean

    def log_marginal_likelihood(self):
        check_is_fitted(self, "posterior_")
        return log_marginal_likelihood(self.posterior_.dataset, self.kernel_)
