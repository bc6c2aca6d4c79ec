"""Input validation helpers in the spirit of sklearn.utils.validation."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InvalidInputError


def check_angles(X, allow_empty=False):
    """Return ``X`` as a float (n, 2) array of (azimuth, elevation) radians."""
    try:
        X = check_array(
            np.asarray(X, dtype=float).reshape(-1, 2) if np.ndim(X) == 1 else X,
            dtype=np.float64,
            ensure_2d=True,
            ensure_min_samples=0 if allow_empty else 1,
        )
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from exc
    if X.shape[1] != 2:
        raise InvalidInputError(f"expected (n, 2) angular inputs, got shape {X.shape}")
    return X


def check_angles_targets(X, y, allow_empty=False):
    X = check_angles(X, allow_empty=allow_empty)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise InvalidInputError(
            f"inputs and targets differ in length: {X.shape[0]} != {y.shape[0]}"
        )
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets must be finite")
    return X, y


def check_positive_depths(depth):
    depth = np.asarray(depth, dtype=float)
    bad = ~np.isfinite(depth) | (depth <= 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise InvalidInputError(f"depth at index {i} must be positive and finite, got {depth[i]}")
    return depth
