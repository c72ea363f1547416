"""Input validation shared by estimators and functional operations."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionMismatchError, EmptyCollectionError, NonFiniteError


def as_2d_float(X, *, name="X", dtype=np.float64, allow_empty=False):
    """Return ``X`` as a finite 2-D float array.

    Accepts anything ``check_array`` accepts plus objects exposing a
    ``vectors`` attribute (``EmbeddingMatrix``).
    """
    if hasattr(X, "vectors"):
        X = X.vectors
    X = np.asarray(X)
    if X.ndim == 2 and X.shape[0] == 0:
        if allow_empty:
            return X.astype(dtype, copy=False)
        raise EmptyCollectionError(f"{name} is empty")
    if X.ndim == 2 and not np.all(np.isfinite(X)):
        raise NonFiniteError(f"{name} contains NaN or infinite values")
    return check_array(X, dtype=dtype, ensure_2d=True, ensure_all_finite=True,
                       ensure_min_samples=1, ensure_min_features=1, copy=False)


def check_dim(X, expected, *, name="X"):
    if X.shape[1] != expected:
        raise DimensionMismatchError(
            f"{name} has dimension {X.shape[1]}, expected {expected}")


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)
