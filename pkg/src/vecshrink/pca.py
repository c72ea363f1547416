"""PCA via symmetric eigendecomposition of the population covariance.

The covariance is always taken about the fit data's own mean, whichever
collection (documents, queries or both pooled) it was fitted on. Component
signs are fixed so that each row's largest-magnitude entry is positive,
which makes serialized models reproducible.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import (
    BaseEstimator,
    ClassNamePrefixFeaturesOutMixin,
    TransformerMixin,
)
from sklearn.utils.validation import check_is_fitted

from ._validation import as_2d_float, check_dim, check_positive_int
from .exceptions import DimensionMismatchError

FIT_SOURCES = ("documents", "queries", "both")
DEFAULT_SCALES = (0.5, 0.8, 0.8, 0.9, 0.8)


def _fix_signs(components):
    pivot = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), pivot])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


class PCAReducer(ClassNamePrefixFeaturesOutMixin, TransformerMixin, BaseEstimator):
    """Project onto the top principal directions, optionally down-weighting
    the leading ones.

    Parameters
    ----------
    n_components : int
        Output dimension.
    component_scales : sequence of float, optional
        Multipliers for the first ``len(component_scales)`` output
        coordinates, each in (0, 1]. ``None`` means no scaling.
    fit_source : {"documents", "queries", "both"}
        Recorded provenance of the fit data; the pipeline uses it to choose
        which rows to pass to ``fit``.

    Attributes
    ----------
    mean_ : ndarray of shape (n_features,)
    components_ : ndarray of shape (n_components, n_features)
        Orthonormal rows sorted by descending eigenvalue.
    eigenvalues_ : ndarray of shape (n_components,)
    component_scales_ : ndarray of shape (n_components,)
    """

    def __init__(self, n_components=128, component_scales=None, fit_source="documents"):
        self.n_components = n_components
        self.component_scales = component_scales
        self.fit_source = fit_source

    def fit(self, X, y=None):
        X = as_2d_float(X)
        n, d = X.shape
        k = check_positive_int(self.n_components, "n_components")
        if k > d:
            raise ValueError(f"n_components={k} exceeds input dimension {d}")
        if n < k:
            raise ValueError(f"PCA with {k} components needs at least {k} rows, got {n}")
        if self.fit_source not in FIT_SOURCES:
            raise ValueError(f"fit_source must be one of {FIT_SOURCES}")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = centered.T @ centered / n
        cov = (cov + cov.T) / 2
        w, V = np.linalg.eigh(cov)
        order = np.argsort(-w, kind="stable")[:k]
        self.eigenvalues_ = np.clip(w[order], 0.0, None)
        self.components_ = _fix_signs(V[:, order].T)
        self.component_scales_ = _build_scales(self.component_scales, k)
        self.n_features_in_ = d
        self._n_features_out = k
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = as_2d_float(X)
        check_dim(X, self.n_features_in_)
        return ((X - self.mean_) @ self.components_.T) * self.component_scales_

    def inverse_transform(self, Y):
        check_is_fitted(self, "components_")
        Y = as_2d_float(Y)
        if Y.shape[1] != self.components_.shape[0]:
            raise DimensionMismatchError(
                f"codes have dimension {Y.shape[1]}, model has {self.components_.shape[0]}")
        return (Y / self.component_scales_) @ self.components_ + self.mean_

    def reconstruction_loss(self, X):
        """Mean squared reconstruction error in the input space."""
        X = as_2d_float(X)
        return float(np.mean((self.inverse_transform(self.transform(X)) - X) ** 2))

    def explained_variance_ratio(self, total_variance):
        return self.eigenvalues_ / total_variance


def _build_scales(factors, k):
    scales = np.ones(k)
    if factors is None:
        return scales
    factors = np.asarray(factors, dtype=np.float64).ravel()
    if factors.size > k:
        raise ValueError(f"{factors.size} scale factors for {k} components")
    if np.any(factors <= 0) or np.any(factors > 1):
        raise ValueError("scale factors must lie in (0, 1]")
    scales[:factors.size] = factors
    return scales


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------

def pooled_rows(documents, queries, fit_source):
    """Rows to fit on for a given ``fit_source``."""
    if fit_source == "documents":
        return as_2d_float(documents)
    if fit_source == "queries":
        return as_2d_float(queries)
    if fit_source == "both":
        return np.vstack([as_2d_float(documents), as_2d_float(queries)])
    raise ValueError(f"fit_source must be one of {FIT_SOURCES}")


def fit_pca(data, n_components, fit_source="documents"):
    """Fit PCA on a matrix, or on a ``(documents, queries)`` pair pooled or
    selected according to ``fit_source``."""
    if isinstance(data, tuple):
        data = pooled_rows(data[0], data[1], fit_source)
    return PCAReducer(n_components, fit_source=fit_source).fit(data)


def transform(model, matrix):
    out = model.transform(matrix)
    return matrix.with_vectors(out) if hasattr(matrix, "with_vectors") else out


def reconstruct(model, reduced):
    out = model.inverse_transform(reduced)
    return reduced.with_vectors(out) if hasattr(reduced, "with_vectors") else out


def reconstruction_loss(model, matrix):
    return model.reconstruction_loss(matrix)


def scale_components(model, factors=DEFAULT_SCALES):
    """Copy of ``model`` with its first ``len(factors)`` output coordinates
    multiplied by ``factors``."""
    check_is_fitted(model, "components_")
    scales = model.component_scales_.copy()
    factors = np.asarray(factors, dtype=np.float64).ravel()
    if factors.size > len(scales):
        raise ValueError(f"{factors.size} factors for a {len(scales)}-component model")
    if np.any(factors <= 0) or np.any(factors > 1):
        raise ValueError("scale factors must lie in (0, 1]")
    scales[:factors.size] = factors
    scaled = PCAReducer(model.n_components, tuple(factors), model.fit_source)
    for attr in ("mean_", "components_", "eigenvalues_", "n_features_in_", "_n_features_out"):
        setattr(scaled, attr, getattr(model, attr))
    scaled.component_scales_ = scales
    return scaled
