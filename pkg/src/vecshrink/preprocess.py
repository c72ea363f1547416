"""Centering, row normalization and z-scoring.

Statistics are always fitted per collection: query statistics never touch
document vectors and vice versa. :func:`apply_spec` enforces this by
fitting fresh :class:`CollectionStats` on each side of a bundle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_2d_float, check_dim
from .exceptions import EmptyCollectionError, ZeroVectorWarning

STEPS = ("center", "normalize", "zscore")
ZSCORE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class CollectionStats:
    """Per-dimension statistics of one collection.

    Centering subtracts ``shift`` (the first row) and then the mean of the
    shifted rows. This equals subtracting ``mean`` in exact arithmetic, and
    it makes the result bit-identical for inputs that differ by a constant
    offset whenever the row differences are exact.
    """

    mean: np.ndarray
    std: np.ndarray
    source_kind: str
    shift: np.ndarray = None
    shifted_mean: np.ndarray = None

    def __post_init__(self):
        if self.shift is None:
            object.__setattr__(self, "shift", np.zeros_like(self.mean))
            object.__setattr__(self, "shifted_mean", self.mean)

    @property
    def dim(self):
        return self.mean.shape[0]


def fit_stats(matrix):
    """Per-dimension mean and population standard deviation."""
    X = np.asarray(matrix.vectors, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyCollectionError("cannot fit statistics on an empty matrix")
    shift = X[0].copy()
    return CollectionStats(X.mean(axis=0), X.std(axis=0), matrix.kind,
                           shift, (X - shift).mean(axis=0))


def _check_stats(matrix, stats):
    check_dim(matrix.vectors, stats.dim, name=f"{matrix.kind} matrix")
    if stats.source_kind != matrix.kind:
        raise ValueError(
            f"statistics fitted on {stats.source_kind}s applied to {matrix.kind}s")


def center(matrix, stats):
    _check_stats(matrix, stats)
    X = np.asarray(matrix.vectors, dtype=np.float64)
    return matrix.with_vectors((X - stats.shift) - stats.shifted_mean)


def normalize_rows(X):
    """Scale nonzero rows to unit L2 norm. Returns ``(X_normed, n_zero_rows)``."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0
    out = X / np.where(zero, 1.0, norms)[:, None]
    return out, int(zero.sum())


def normalize(matrix):
    """Unit-normalize every nonzero row; zero rows stay zero.

    A :class:`ZeroVectorWarning` carrying the zero-row count is emitted when
    any are met.
    """
    out, n_zero = normalize_rows(matrix.vectors)
    if n_zero:
        warnings.warn(ZeroVectorWarning(n_zero), stacklevel=2)
    return matrix.with_vectors(out)


def zscore(matrix, stats):
    """(x - mean) / std per dimension; near-constant dimensions map to 0."""
    _check_stats(matrix, stats)
    X = np.asarray(matrix.vectors, dtype=np.float64)
    constant = stats.std < ZSCORE_EPS
    out = (X - stats.mean) / np.where(constant, 1.0, stats.std)
    out[:, constant] = 0.0
    return matrix.with_vectors(out)


@dataclass(frozen=True)
class PreprocessSpec:
    """Ordered pre- or post-processing steps, e.g. ``("center", "normalize")``."""

    steps: tuple = ()
    applies_to: str = "pre"

    def __post_init__(self):
        steps = tuple(self.steps)
        for step in steps:
            if step not in STEPS:
                raise ValueError(f"unknown preprocessing step {step!r}; choose from {STEPS}")
        if "zscore" in steps and "center" in steps:
            raise ValueError("zscore already centers; do not combine it with center")
        if self.applies_to not in ("pre", "mid", "post"):
            raise ValueError(f"applies_to must be 'pre', 'mid' or 'post', got {self.applies_to!r}")
        object.__setattr__(self, "steps", steps)

    @classmethod
    def parse(cls, text, applies_to="pre"):
        if isinstance(text, str):
            items = [s.strip() for s in text.replace(",", " ").split()]
        else:
            items = list(text or ())
        return cls(tuple(s for s in items if s and s != "none"), applies_to)

    def __bool__(self):
        return bool(self.steps)


def apply_steps(matrix, steps):
    """Apply ``steps`` to a single matrix with statistics fitted on itself."""
    for step in steps:
        if step == "center":
            matrix = center(matrix, fit_stats(matrix))
        elif step == "normalize":
            matrix = normalize(matrix)
        elif step == "zscore":
            matrix = zscore(matrix, fit_stats(matrix))
        else:  # guarded by PreprocessSpec
            raise ValueError(step)
    return matrix


def apply_spec(spec, bundle):
    """Apply ``spec`` to both sides of ``bundle``, fitting statistics
    separately on documents and on queries."""
    if not spec.steps:
        return bundle
    return bundle.replace(documents=apply_steps(bundle.documents, spec.steps),
                          queries=apply_steps(bundle.queries, spec.steps))


# ---------------------------------------------------------------------------
# Estimator API
# ---------------------------------------------------------------------------

class Centerer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Subtract the per-dimension mean learned in ``fit``."""

    def fit(self, X, y=None):
        X = as_2d_float(X)
        self.mean_ = X.mean(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = as_2d_float(X)
        check_dim(X, self.n_features_in_)
        return X - self.mean_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return as_2d_float(X) + self.mean_


class RowNormalizer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Scale each row to unit L2 norm. Stateless; zero rows are kept.

    ``n_zero_rows_`` records how many zero rows the last ``transform`` saw.
    """

    def fit(self, X, y=None):
        X = as_2d_float(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = as_2d_float(X)
        out, self.n_zero_rows_ = normalize_rows(X)
        if self.n_zero_rows_:
            warnings.warn(ZeroVectorWarning(self.n_zero_rows_), stacklevel=2)
        return out

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


class ZScorer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Standardize with population std; dims with std < 1e-12 become 0."""

    def fit(self, X, y=None):
        X = as_2d_float(X)
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ["mean_", "scale_"])
        X = as_2d_float(X)
        check_dim(X, self.n_features_in_)
        constant = self.scale_ < ZSCORE_EPS
        out = (X - self.mean_) / np.where(constant, 1.0, self.scale_)
        out[:, constant] = 0.0
        return out


def make_transformer(step):
    return {"center": Centerer, "normalize": RowNormalizer, "zscore": ZScorer}[step]()


__all__ = [
    "Centerer",
    "CollectionStats",
    "PreprocessSpec",
    "RowNormalizer",
    "ZScorer",
    "apply_spec",
    "apply_steps",
    "center",
    "fit_stats",
    "make_transformer",
    "normalize",
    "normalize_rows",
    "zscore",
]
