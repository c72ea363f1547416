"""Coordinate selection and random projections.

``ProjectionMap`` covers four kinds: ``drop`` (uniformly random subset of
coordinates), ``greedy_drop`` (coordinates ranked by how much retrieval
suffers when each one is left out), ``gaussian`` and ``sparse`` random
matrices. Selection kinds store sorted index lists; matrix kinds store a
``(out_dim, in_dim)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_2d_float, check_dim, check_positive_int
from .exceptions import DimensionMismatchError
from .preprocess import PreprocessSpec, apply_spec
from .retrieval import (
    FLAT,
    INNER_PRODUCT,
    RetrievalConfig,
    RetrievalRun,
    _id_order,
    evaluate,
    per_query_hits,
    r_precision_k,
    top_k_smallest,
)

DROP = "drop"
GREEDY_DROP = "greedy_drop"
GAUSSIAN = "gaussian"
SPARSE = "sparse"
KINDS = (DROP, GREEDY_DROP, GAUSSIAN, SPARSE)
SELECTION_KINDS = (DROP, GREEDY_DROP)


@dataclass(frozen=True, eq=False)
class ProjectionMap:
    kind: str
    in_dim: int
    out_dim: int
    seed: int | None = None
    indices: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown projection kind {self.kind!r}")
        if self.kind in SELECTION_KINDS:
            idx = np.asarray(self.indices, dtype=np.int64)
            if idx.shape != (self.out_dim,) or len(np.unique(idx)) != self.out_dim:
                raise ValueError("selection needs out_dim unique indices")
            if idx.size and (idx.min() < 0 or idx.max() >= self.in_dim):
                raise ValueError("selection index out of range")
            idx.flags.writeable = False
            object.__setattr__(self, "indices", idx)
        else:
            mat = np.asarray(self.matrix, dtype=np.float64)
            if mat.shape != (self.out_dim, self.in_dim):
                raise ValueError(
                    f"matrix has shape {mat.shape}, expected {(self.out_dim, self.in_dim)}")
            mat.flags.writeable = False
            object.__setattr__(self, "matrix", mat)

    def as_matrix(self):
        """Dense ``(out_dim, in_dim)`` equivalent of the map."""
        if self.matrix is not None:
            return np.array(self.matrix)
        out = np.zeros((self.out_dim, self.in_dim))
        out[np.arange(self.out_dim), self.indices] = 1.0
        return out

    def equals(self, other):
        same = (self.kind, self.in_dim, self.out_dim, self.seed) == (
            other.kind, other.in_dim, other.out_dim, other.seed)
        if not same:
            return False
        if self.kind in SELECTION_KINDS:
            return np.array_equal(self.indices, other.indices)
        return self.matrix.tobytes() == other.matrix.tobytes()


def _check_dims(d, d_out):
    check_positive_int(d, "in_dim")
    check_positive_int(d_out, "out_dim")
    if d_out > d:
        raise ValueError(f"target dimension {d_out} exceeds input dimension {d}")


def fit_drop(d, d_out, seed=0):
    """Keep a uniformly random ``d_out``-subset of coordinates (sorted)."""
    _check_dims(d, d_out)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(d, size=d_out, replace=False))
    return ProjectionMap(DROP, d, d_out, seed, indices=idx)


def fit_gaussian(d, d_out, seed=0):
    """Dense map with i.i.d. N(0, 1/d_out) entries."""
    _check_dims(d, d_out)
    rng = np.random.default_rng(seed)
    mat = rng.normal(0.0, 1.0 / np.sqrt(d_out), size=(d_out, d))
    return ProjectionMap(GAUSSIAN, d, d_out, seed, matrix=mat)


def sparse_density(d):
    return 1.0 / np.sqrt(d)


def fit_sparse(d, d_out, seed=0):
    """Sparse map: entries ±sqrt(1/(density*d_out)) w.p. density/2 each,
    zero otherwise, with density = 1/sqrt(d)."""
    _check_dims(d, d_out)
    rng = np.random.default_rng(seed)
    density = sparse_density(d)
    scale = np.sqrt(1.0 / (density * d_out))
    u = rng.random((d_out, d))
    mat = np.where(u < density / 2, scale, np.where(u < density, -scale, 0.0))
    return ProjectionMap(SPARSE, d, d_out, seed, matrix=mat)


def apply(pmap, X):
    """Project rows of ``X`` (array or ``EmbeddingMatrix``)."""
    matrix = X if hasattr(X, "with_vectors") else None
    A = as_2d_float(X)
    if A.shape[1] != pmap.in_dim:
        raise DimensionMismatchError(
            f"input has dimension {A.shape[1]}, map expects {pmap.in_dim}")
    if pmap.kind in SELECTION_KINDS:
        out = A[:, pmap.indices]
    else:
        out = A @ pmap.matrix.T
    return matrix.with_vectors(out) if matrix is not None else out


# ---------------------------------------------------------------------------
# Greedy dimension scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DimensionScores:
    """``scores[i]``: R-Precision with coordinate ``i`` left out."""

    scores: np.ndarray
    eval_config: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 1 or np.any((s < 0) | (s > 1)):
            raise ValueError("scores must be a 1-D array in [0, 1]")
        object.__setattr__(self, "scores", s)

    @property
    def dim(self):
        return self.scores.shape[0]


_FAST_POST = {(), ("normalize",), ("center", "normalize"), ("center",)}


def _subsample_queries(bundle, query_subsample, seed):
    judged = [i for i, q in enumerate(bundle.queries.ids) if q in bundle.judgments]
    queries = bundle.queries.take(judged)
    if query_subsample is not None and query_subsample < len(judged):
        rng = np.random.default_rng(seed)
        queries = queries.take(np.sort(rng.choice(len(judged), query_subsample, replace=False)))
    return queries


def _score_generic(bundle, queries, config, post):
    d = bundle.dim
    scores = np.empty(d)
    for i in range(d):
        keep = np.r_[0:i, i + 1:d]
        sub = bundle.replace(documents=bundle.documents.with_vectors(bundle.documents.vectors[:, keep]),
                             queries=queries.with_vectors(queries.vectors[:, keep]))
        sub = apply_spec(post, sub)
        scores[i] = evaluate(sub.queries, sub.documents, bundle.judgments, config)[0]
    return scores


def _score_rank_one(bundle, queries, config, post):
    # Leaving out coordinate i changes every score by a rank-one term; with
    # centering (which commutes with coordinate removal) and normalization
    # only the row norms need a matching update.
    doc_ids = bundle.documents.ids
    D = np.asarray(bundle.documents.vectors, dtype=np.float64)
    order = _id_order(doc_ids)
    if order is not None:
        # Hold documents in id order so equal scores rank by id.
        D = D[order]
        doc_ids = tuple(doc_ids[j] for j in order)
    Q = np.asarray(queries.vectors, dtype=np.float64)
    if "center" in post.steps:
        D = D - D.mean(axis=0)
        Q = Q - Q.mean(axis=0)
    normalize = "normalize" in post.steps
    ip = Q @ D.T
    q_sq = np.einsum("ij,ij->i", Q, Q)
    d_sq = np.einsum("ij,ij->i", D, D)
    ks = r_precision_k(queries.ids, bundle.judgments)
    k_max = int(ks.max())
    qids = tuple(queries.ids)
    scores = np.empty(D.shape[1])
    for i in range(D.shape[1]):
        ip_i = ip - np.outer(Q[:, i], D[:, i])
        qn = q_sq - Q[:, i] ** 2
        dn = d_sq - D[:, i] ** 2
        if normalize:
            qn_root = np.sqrt(np.where(qn > 0, qn, 1.0))
            dn_root = np.sqrt(np.where(dn > 0, dn, 1.0))
            ip_i = ip_i / qn_root[:, None] / dn_root[None, :]
            dn = np.where(dn > 0, 1.0, 0.0)
        if config.metric == INNER_PRODUCT:
            keys = -ip_i
        else:
            keys = dn[None, :] - 2.0 * ip_i
        idx = top_k_smallest(keys, k_max)
        run = RetrievalRun(qids, doc_ids,
                           tuple(idx[j, :ks[j]] for j in range(len(ks))),
                           tuple(np.zeros(ks[j]) for j in range(len(ks))), config.metric)
        hits, r = per_query_hits(run, bundle.judgments)
        scores[i] = float(np.mean(hits / r))
    return scores


def score_dimensions(bundle, config=None, post=None, query_subsample=None, seed=0,
                     method="auto"):
    """R-Precision with each coordinate left out, one coordinate at a time.

    ``post`` is applied after removing the coordinate (statistics refitted
    per collection). ``query_subsample`` bounds cost by scoring a seeded
    random subset of judged queries. ``method="auto"`` uses an exact rank-one
    update for flat search with post-processing drawn from
    ``center``/``normalize``; ``"generic"`` re-runs the full evaluation.
    """
    config = config or RetrievalConfig()
    post = post or PreprocessSpec((), "post")
    queries = _subsample_queries(bundle, query_subsample, seed)
    info = {"metric": config.metric, "search": config.search, "post": list(post.steps),
            "n_queries": len(queries), "query_subsample": query_subsample, "seed": seed}
    if bundle.dim == 1:
        return DimensionScores(np.zeros(1), {**info, "method": "degenerate"})
    fast = config.search == FLAT and post.steps in _FAST_POST and config.k_policy == "r_precision"
    if method == "generic" or (method == "auto" and not fast):
        scores = _score_generic(bundle, queries, config, post)
        info["method"] = "generic"
    elif method in ("auto", "rank_one"):
        if not fast:
            raise ValueError("rank-one scoring needs flat search and center/normalize post steps")
        scores = _score_rank_one(bundle, queries, config, post)
        info["method"] = "rank_one"
    else:
        raise ValueError(f"unknown scoring method {method!r}")
    return DimensionScores(scores, info)


MOST_IMPORTANT = "most_important"
LITERAL = "literal"


def fit_greedy_drop(scores, d_out, retain=MOST_IMPORTANT):
    """Select ``d_out`` coordinates from leave-one-out scores.

    Coordinates are ordered by descending score, ties by ascending index.
    With ``retain="most_important"`` the first ``d - d_out`` in that order
    (whose removal costs least) are dropped. ``retain="literal"`` keeps the
    first ``d_out`` instead.
    """
    s = scores.scores if isinstance(scores, DimensionScores) else np.asarray(scores, dtype=float)
    d = s.shape[0]
    _check_dims(d, d_out)
    order = np.lexsort((np.arange(d), -s))
    if retain == MOST_IMPORTANT:
        kept = order[d - d_out:]
    elif retain == LITERAL:
        kept = order[:d_out]
    else:
        raise ValueError(f"retain must be {MOST_IMPORTANT!r} or {LITERAL!r}")
    return ProjectionMap(GREEDY_DROP, d, d_out, None, indices=np.sort(kept))


# ---------------------------------------------------------------------------
# Estimator API
# ---------------------------------------------------------------------------

class _ProjectionBase(TransformerMixin, BaseEstimator):
    def transform(self, X):
        check_is_fitted(self, "projection_")
        X = as_2d_float(X)
        check_dim(X, self.projection_.in_dim)
        return apply(self.projection_, X)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "projection_")
        return np.asarray([f"proj{i}" for i in range(self.projection_.out_dim)], dtype=object)


class RandomDimensionDrop(_ProjectionBase):
    """Keep a random subset of ``n_components`` coordinates."""

    def __init__(self, n_components=128, random_state=0):
        self.n_components = n_components
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_2d_float(X)
        self.n_features_in_ = X.shape[1]
        self.projection_ = fit_drop(X.shape[1], self.n_components, self.random_state)
        return self


class GaussianProjection(_ProjectionBase):
    def __init__(self, n_components=128, random_state=0):
        self.n_components = n_components
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_2d_float(X)
        self.n_features_in_ = X.shape[1]
        self.projection_ = fit_gaussian(X.shape[1], self.n_components, self.random_state)
        return self


class SparseProjection(_ProjectionBase):
    def __init__(self, n_components=128, random_state=0):
        self.n_components = n_components
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_2d_float(X)
        self.n_features_in_ = X.shape[1]
        self.projection_ = fit_sparse(X.shape[1], self.n_components, self.random_state)
        return self


class GreedyDimensionDrop(_ProjectionBase):
    """Keep the coordinates whose removal hurts retrieval most.

    Needs relevance judgments, so it is fitted on a whole bundle with
    :meth:`fit_bundle` (or from precomputed ``scores``) rather than on a bare
    matrix.
    """

    def __init__(self, n_components=128, retain=MOST_IMPORTANT, metric=INNER_PRODUCT,
                 post=("center", "normalize"), query_subsample=None, random_state=0):
        self.n_components = n_components
        self.retain = retain
        self.metric = metric
        self.post = post
        self.query_subsample = query_subsample
        self.random_state = random_state

    def fit(self, X, y=None, scores=None):
        if scores is None:
            raise TypeError("GreedyDimensionDrop needs leave-one-out scores; "
                            "use fit_bundle(bundle) or pass scores=")
        self.scores_ = scores if isinstance(scores, DimensionScores) else DimensionScores(scores)
        self.n_features_in_ = self.scores_.dim
        self.projection_ = fit_greedy_drop(self.scores_, self.n_components, self.retain)
        return self

    def fit_bundle(self, bundle, config=None):
        config = config or RetrievalConfig(metric=self.metric)
        scores = score_dimensions(bundle, config, PreprocessSpec(tuple(self.post), "post"),
                                  self.query_subsample, self.random_state)
        return self.fit(None, scores=scores)
