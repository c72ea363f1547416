"""Exact and IVF nearest-neighbor search, R-Precision and hit analysis.

Ranking is fully deterministic: documents are ordered by score under the
configured metric and ties go to the lower document row index (row order of
the indexed matrix, which is also id order for generated bundles).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import as_2d_float, check_positive_int
from .exceptions import (
    DimensionMismatchError,
    MissingJudgmentsError,
    ZeroVarianceError,
)

INNER_PRODUCT = "inner_product"
L2 = "l2"
METRICS = (INNER_PRODUCT, L2)
_METRIC_ALIASES = {"ip": INNER_PRODUCT, "inner_product": INNER_PRODUCT, "l2": L2}

FLAT = "flat"
IVF = "ivf"

_BLOCK = 512


def canonical_metric(metric):
    try:
        return _METRIC_ALIASES[str(metric).lower()]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; use 'ip' or 'l2'") from None


@dataclass(frozen=True)
class IVFParams:
    nlist: int = 200
    nprobe: int = 100
    kmeans_iters: int = 25
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.nlist, "nlist")
        check_positive_int(self.nprobe, "nprobe")
        check_positive_int(self.kmeans_iters, "kmeans_iters")
        if self.nprobe > self.nlist:
            raise ValueError(f"nprobe ({self.nprobe}) must not exceed nlist ({self.nlist})")

    def scaled_for(self, n_docs, min_points_per_list=39):
        """Shrink ``nlist`` for small corpora, keeping the ``nprobe/nlist`` ratio."""
        nlist = max(1, min(self.nlist, n_docs // min_points_per_list))
        if nlist == self.nlist:
            return self
        nprobe = min(nlist, max(1, round(nlist * self.nprobe / self.nlist)))
        return replace(self, nlist=nlist, nprobe=nprobe)


@dataclass(frozen=True)
class RetrievalConfig:
    """How to search: metric, flat vs IVF, and how many documents per query.

    ``k_policy`` is ``"r_precision"`` (k = number of relevant documents of
    each query) or a fixed positive integer.
    """

    metric: str = INNER_PRODUCT
    search: str = FLAT
    ivf: IVFParams = field(default_factory=IVFParams)
    k_policy: object = "r_precision"

    def __post_init__(self):
        object.__setattr__(self, "metric", canonical_metric(self.metric))
        if self.search not in (FLAT, IVF):
            raise ValueError(f"search must be 'flat' or 'ivf', got {self.search!r}")
        if self.k_policy != "r_precision":
            check_positive_int(self.k_policy, "k_policy")

    def with_metric(self, metric):
        return replace(self, metric=canonical_metric(metric))

    def describe(self):
        out = {"metric": self.metric, "search": self.search, "k_policy": self.k_policy}
        if self.search == IVF:
            out.update(nlist=self.ivf.nlist, nprobe=self.ivf.nprobe,
                       kmeans_iters=self.ivf.kmeans_iters, seed=self.ivf.seed)
        return out


# ---------------------------------------------------------------------------
# Ranking kernel
# ---------------------------------------------------------------------------

def top_k_smallest(keys, k):
    """Indices of the ``k`` smallest entries per row, ties by lower column.

    Returns an ``(n_rows, min(k, n_cols))`` index array sorted by
    ``(key, column)``.
    """
    keys = np.asarray(keys)
    n_rows, n_cols = keys.shape
    k = min(int(k), n_cols)
    if k == 0 or n_rows == 0:
        return np.empty((n_rows, 0), dtype=np.intp)
    if k < n_cols:
        kth = np.partition(keys, k - 1, axis=1)[:, k - 1]
        below = keys < kth[:, None]
        at = keys == kth[:, None]
        room = k - below.sum(axis=1)
        chosen = below | (at & (np.cumsum(at, axis=1) <= room[:, None]))
        cols = np.nonzero(chosen)[1].reshape(n_rows, k)
    else:
        cols = np.broadcast_to(np.arange(n_cols), (n_rows, n_cols))
    vals = np.take_along_axis(keys, cols, axis=1)
    order = np.argsort(vals, axis=1, kind="stable")
    return np.take_along_axis(cols, order, axis=1)


def _ranking_keys(Q, D, d_sq, metric):
    """Ascending ranking keys: ``-<q,d>`` for IP, ``|d|^2 - 2<q,d>`` for L2."""
    ip = Q @ D.T
    if metric == INNER_PRODUCT:
        return -ip
    return d_sq[None, :] - 2.0 * ip


def _scores_from_keys(keys, q_sq, metric):
    if metric == INNER_PRODUCT:
        return -keys
    return keys + q_sq[:, None]


def exhaustive_search(Q, D, k, metric):
    """Score every document and rank. Returns ``(indices, scores)`` arrays.

    For L2 the score is the squared Euclidean distance.
    """
    metric = canonical_metric(metric)
    Q = np.asarray(Q, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    d_sq = np.einsum("ij,ij->i", D, D)
    idx_blocks, score_blocks = [], []
    for start in range(0, Q.shape[0], _BLOCK):
        Qb = Q[start:start + _BLOCK]
        keys = _ranking_keys(Qb, D, d_sq, metric)
        idx = top_k_smallest(keys, k)
        q_sq = np.einsum("ij,ij->i", Qb, Qb)
        idx_blocks.append(idx)
        score_blocks.append(_scores_from_keys(np.take_along_axis(keys, idx, axis=1), q_sq, metric))
    if not idx_blocks:
        return np.empty((0, 0), dtype=np.intp), np.empty((0, 0))
    return np.vstack(idx_blocks), np.vstack(score_blocks)


# ---------------------------------------------------------------------------
# Indexes
# ---------------------------------------------------------------------------

def _id_order(ids):
    """Rows sorted by id (string order), or ``None`` when already sorted."""
    order = np.argsort(np.asarray(ids, dtype=object), kind="stable")
    return None if np.array_equal(order, np.arange(len(ids))) else order


class FlatIndex:
    """Brute-force index: stores the document matrix.

    Equal scores are ranked by ascending document id; documents are held in
    id order internally when the input rows are not.
    """

    kind = FLAT

    def __init__(self, vectors, ids=None):
        self.vectors = as_2d_float(vectors, name="documents")
        self.ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(len(self.vectors)))
        self.sq_norms = np.einsum("ij,ij->i", self.vectors, self.vectors)
        self.id_order = _id_order(self.ids)
        self._search_vectors = (self.vectors if self.id_order is None
                                else self.vectors[self.id_order])

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]


def kmeans(X, n_clusters, n_iter=25, seed=0):
    """Lloyd's k-means with seeded data-point initialization.

    Empty clusters are re-seeded with the points farthest from their current
    centroid. Returns ``(centroids, assignment)``; the assignment is
    recomputed against the final centroids.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < n_clusters:
        raise ValueError(f"k-means needs at least {n_clusters} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = X[np.sort(rng.choice(n, size=n_clusters, replace=False))].copy()
    x_sq = np.einsum("ij,ij->i", X, X)

    def assign(c):
        d = x_sq[:, None] + np.einsum("ij,ij->i", c, c)[None, :] - 2.0 * (X @ c.T)
        a = np.argmin(d, axis=1)
        return a, d[np.arange(n), a]

    for _ in range(n_iter):
        labels, dist = assign(centroids)
        counts = np.bincount(labels, minlength=n_clusters)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            far = np.lexsort((np.arange(n), -dist))
            centroids[empty] = X[far[:empty.size]]
    labels, _ = assign(centroids)
    return centroids, labels


class IVFIndex:
    """Inverted-file index: k-means cells with per-cell document lists."""

    kind = IVF

    def __init__(self, vectors, params, ids=None):
        self.vectors = as_2d_float(vectors, name="documents")
        n = self.vectors.shape[0]
        if n < params.nlist:
            raise ValueError(f"IVF needs at least nlist={params.nlist} documents, got {n}")
        self.params = params
        self.ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(n))
        self.sq_norms = np.einsum("ij,ij->i", self.vectors, self.vectors)
        self.centroids, self.assignment = kmeans(self.vectors, params.nlist,
                                                 params.kmeans_iters, params.seed)
        self.lists = [np.flatnonzero(self.assignment == c) for c in range(params.nlist)]
        self.id_order = _id_order(self.ids)
        self.id_rank = np.empty(n, dtype=np.intp)
        self.id_rank[self.id_order if self.id_order is not None else np.arange(n)] = np.arange(n)
        self._centroid_sq = np.einsum("ij,ij->i", self.centroids, self.centroids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    def probe(self, Q, nprobe):
        keys = self._centroid_sq[None, :] - 2.0 * (Q @ self.centroids.T)
        return top_k_smallest(keys, nprobe)


def build_index(docs, config=None):
    """Build the index named by ``config.search`` over ``docs``."""
    config = config or RetrievalConfig()
    ids = getattr(docs, "ids", None)
    if config.search == FLAT:
        return FlatIndex(docs, ids)
    return IVFIndex(docs, config.ivf, ids)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RetrievalRun:
    """Ranked documents per query.

    ``indices[i]`` holds document row indices for query ``query_ids[i]``;
    ``scores[i]`` the matching scores (IP, or squared L2 distance).
    """

    query_ids: tuple
    doc_ids: tuple
    indices: tuple
    scores: tuple
    metric: str

    def ranked_ids(self, qid_or_pos):
        pos = qid_or_pos if isinstance(qid_or_pos, (int, np.integer)) else self.query_ids.index(qid_or_pos)
        return [self.doc_ids[j] for j in self.indices[pos]]

    def __len__(self):
        return len(self.query_ids)

    def same_ranking(self, other):
        return (self.query_ids == other.query_ids
                and len(self.indices) == len(other.indices)
                and all(np.array_equal(a, b) for a, b in zip(self.indices, other.indices)))

    def write_tsv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("query_id\trank\tdoc_id\tscore\n")
            for qid, idx, sc in zip(self.query_ids, self.indices, self.scores):
                fh.writelines(f"{qid}\t{rank}\t{self.doc_ids[j]}\t{float(s):.9g}\n"
                              for rank, (j, s) in enumerate(zip(idx, sc), 1))


def _per_query_k(k, n_queries):
    ks = np.broadcast_to(np.asarray(k, dtype=np.int64), (n_queries,))
    if np.any(ks < 1):
        raise ValueError("k must be >= 1")
    return ks


def search(index, queries, k, config=None):
    """Top-``k`` search. ``k`` may be an int or one value per query.

    Equal scores are ranked by ascending document id.

    IVF scans only the ``nprobe`` cells nearest to each query (by L2 to the
    centroid); when fewer than ``k`` candidates exist, all are returned.
    """
    config = config or RetrievalConfig()
    metric = config.metric
    qids = tuple(getattr(queries, "ids", ())) or None
    Q = as_2d_float(queries, name="queries")
    if Q.shape[1] != index.dim:
        raise DimensionMismatchError(
            f"queries have dimension {Q.shape[1]}, index has {index.dim}")
    if qids is None:
        qids = tuple(str(i) for i in range(Q.shape[0]))
    ks = _per_query_k(k, Q.shape[0])
    k_max = int(ks.max()) if len(ks) else 0

    if index.kind == FLAT:
        idx, sc = exhaustive_search(Q, index._search_vectors, k_max, metric)
        if index.id_order is not None:
            idx = index.id_order[idx]
        indices = tuple(idx[i, :ks[i]].copy() for i in range(len(ks)))
        scores = tuple(sc[i, :ks[i]].copy() for i in range(len(ks)))
    else:
        nprobe = config.ivf.nprobe if config.search == IVF else index.params.nprobe
        nprobe = min(nprobe, index.params.nlist)
        probes = index.probe(Q, nprobe)
        indices, scores = [], []
        for i in range(Q.shape[0]):
            cand = np.concatenate([index.lists[c] for c in probes[i]])
            cand = cand[np.argsort(index.id_rank[cand], kind="stable")]
            if cand.size == 0:
                indices.append(np.empty(0, dtype=np.intp))
                scores.append(np.empty(0))
                continue
            keys = _ranking_keys(Q[i:i + 1], index.vectors[cand], index.sq_norms[cand], metric)
            local = top_k_smallest(keys, ks[i])[0]
            q_sq = np.array([Q[i] @ Q[i]])
            indices.append(cand[local])
            scores.append(_scores_from_keys(keys[:, local], q_sq, metric)[0])
        indices, scores = tuple(indices), tuple(scores)
    return RetrievalRun(qids, index.ids, indices, scores, metric)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _relevant_rows(run, judgments):
    doc_pos = {d: j for j, d in enumerate(run.doc_ids)}
    rows = []
    for qid in run.query_ids:
        if qid not in judgments:
            raise MissingJudgmentsError(f"query {qid!r} has no relevance judgments")
        rows.append({doc_pos[d] for d in judgments[qid] if d in doc_pos})
    return rows


def per_query_hits(run, judgments):
    """Relevant documents among each query's top-r (r = its relevant count)."""
    rel = _relevant_rows(run, judgments)
    hits = np.empty(len(run), dtype=np.int64)
    r = np.empty(len(run), dtype=np.int64)
    for i, (qid, idx) in enumerate(zip(run.query_ids, run.indices)):
        r[i] = judgments.relevant_count(qid)
        hits[i] = sum(1 for j in idx[:r[i]] if int(j) in rel[i])
    return hits, r


def r_precision(run, judgments):
    """Mean over queries of |top-r ∩ relevant| / r."""
    if len(run) == 0:
        raise ValueError("run has no queries")
    hits, r = per_query_hits(run, judgments)
    return float(np.mean(hits / r))


def r_precision_k(queries_ids, judgments):
    """Per-query k for the R-Precision policy."""
    ks = []
    for qid in queries_ids:
        if qid not in judgments:
            raise MissingJudgmentsError(f"query {qid!r} has no relevance judgments")
        ks.append(judgments.relevant_count(qid))
    return np.asarray(ks, dtype=np.int64)


def evaluate(queries, docs, judgments, config=None, index=None):
    """Search judged queries against ``docs`` and return ``(r_precision, run)``.

    Queries without judgments are skipped.
    """
    config = config or RetrievalConfig()
    keep = [i for i, qid in enumerate(queries.ids) if qid in judgments]
    if not keep:
        raise MissingJudgmentsError("no query has relevance judgments")
    if len(keep) != len(queries.ids):
        queries = queries.take(keep)
    if index is None:
        index = build_index(docs, config)
    if config.k_policy == "r_precision":
        k = r_precision_k(queries.ids, judgments)
    else:
        k = config.k_policy
    run = search(index, queries, k, config)
    return r_precision(run, judgments), run


@dataclass(frozen=True, eq=False)
class HitDistribution:
    query_ids: tuple
    hits: np.ndarray
    relevant: np.ndarray

    @property
    def histogram(self):
        top = int(self.relevant.max()) if len(self.relevant) else 0
        return np.bincount(self.hits, minlength=top + 1)

    def as_dict(self):
        return {"histogram": [int(c) for c in self.histogram],
                "mean_hits": float(self.hits.mean()) if len(self.hits) else 0.0}


def hit_distribution(run, judgments):
    hits, r = per_query_hits(run, judgments)
    return HitDistribution(tuple(run.query_ids), hits, r)


def _paired(a, b):
    if tuple(a.query_ids) != tuple(b.query_ids):
        raise ValueError("hit distributions cover different query sets")
    return np.asarray(a.hits, dtype=np.float64), np.asarray(b.hits, dtype=np.float64)


def hit_correlation(a, b):
    """Pearson correlation of paired per-query hit counts.

    Identical hit vectors give exactly 1.0 (constant ones included); raises
    :class:`ZeroVarianceError` for any other zero-variance case.
    """
    x, y = _paired(a, b)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if np.array_equal(x, y):
        return 1.0
    if sx == 0 or sy == 0:
        raise ZeroVarianceError("correlation undefined: one run has constant hit counts")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def cross_tab(a, b):
    """``counts[i, j]`` = queries with ``i`` hits under ``a`` and ``j`` under ``b``."""
    x, y = _paired(a, b)
    x, y = x.astype(np.int64), y.astype(np.int64)
    size = int(max(x.max(initial=0), y.max(initial=0),
                   np.max(a.relevant, initial=0), np.max(b.relevant, initial=0))) + 1
    counts = np.zeros((size, size), dtype=np.int64)
    np.add.at(counts, (x, y), 1)
    return counts


