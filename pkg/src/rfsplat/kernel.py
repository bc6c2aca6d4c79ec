"""Isotropic squared-exponential covariance over (azimuth, elevation)."""

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import InvalidInputError

__all__ = ["RbfKernel", "gram_matrix", "cross_covariance", "squared_distances"]


@dataclass(frozen=True)
class RbfKernel:
    """k(x, x') = signal_variance * exp(-|x - x'|^2 / (2 lengthscale^2)).

    Distances are plain Euclidean on (azimuth, elevation) in radians, which
    is adequate as long as the azimuth span does not wrap around +-pi.
    """

    lengthscale: float = 0.1
    signal_variance: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise InvalidInputError(f"lengthscale must be > 0, got {self.lengthscale}")
        if not (np.isfinite(self.signal_variance) and self.signal_variance > 0):
            raise InvalidInputError(
                f"signal_variance must be > 0, got {self.signal_variance}"
            )

    def with_params(self, **changes):
        return replace(self, **changes)

    def evaluate(self, x, x_prime):
        """Covariance between two single locations."""
        d = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
        return float(self.signal_variance * np.exp(-0.5 * np.dot(d, d) / self.lengthscale**2))

    def diag(self, X):
        return np.full(len(X), self.signal_variance)

    def __call__(self, X, Y=None):
        return cross_covariance(self, X, X if Y is None else Y)


def squared_distances(A, B):
    """Pairwise squared distances, exactly symmetric when ``A is B``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    out = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        diff = A[:, k, None] - B[None, :, k]
        out += diff * diff
    return out


def cross_covariance(kernel, A, B):
    d2 = squared_distances(A, B)
    return kernel.signal_variance * np.exp(d2 * (-0.5 / kernel.lengthscale**2))


def gram_matrix(kernel, X):
    """T x T covariance matrix of the training inputs."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("gram_matrix needs at least one input location")
    return cross_covariance(kernel, X, X)
