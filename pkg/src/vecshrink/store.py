"""Embedding collections, relevance judgments, their on-disk formats, and a
synthetic generator with a known low-dimensional structure.

Embedding file layout (little-endian)::

    8 bytes   magic b"VECSHRK1"
    u32       dim
    u64       count
    u8        dtype tag (0 = float32, 1 = float64)
    payload   count * dim values, row-major

Ids live in a sibling ``<name>.ids`` text file, one per line, same order.
Qrels are UTF-8 TSV lines ``query_id<TAB>doc_id``; ``#`` starts a comment.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from dataclasses import dataclass, fields
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .exceptions import (
    DimensionMismatchError,
    DuplicateIdError,
    EmptyCollectionError,
    FormatError,
    NonFiniteError,
    UnknownIdError,
)

MAGIC = b"VECSHRK1"
_HEADER = struct.Struct("<8sIQB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}

DOCUMENT = "document"
QUERY = "query"

DOCS_NAME = "documents"
QUERIES_NAME = "queries"
QRELS_NAME = "qrels.tsv"


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Row-major collection of ``dim``-dimensional vectors with stable ids.

    The vector array is made read-only on construction. ``float32`` and
    ``float64`` payloads are kept as-is so that files round-trip bit-exactly.
    """

    ids: tuple
    vectors: np.ndarray
    kind: str = DOCUMENT

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        vectors = np.asarray(self.vectors)
        if vectors.dtype not in (np.float32, np.float64):
            vectors = vectors.astype(np.float64)
        if vectors.ndim != 2:
            raise FormatError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[1] < 1:
            raise FormatError("dimension must be positive")
        if len(ids) != vectors.shape[0]:
            raise FormatError(f"{len(ids)} ids for {vectors.shape[0]} vectors")
        if len(set(ids)) != len(ids):
            raise DuplicateIdError(f"duplicate ids in {self.kind} matrix")
        if not np.all(np.isfinite(vectors)):
            bad = int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])
            raise NonFiniteError(f"non-finite value in {self.kind} row {bad} (id {ids[bad]!r})")
        if self.kind not in (DOCUMENT, QUERY):
            raise ValueError(f"kind must be 'document' or 'query', got {self.kind!r}")
        if vectors.flags.writeable:
            vectors = vectors.copy()
            vectors.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def n_items(self):
        return self.vectors.shape[0]

    def __len__(self):
        return self.n_items

    @property
    def payload_nbytes(self):
        return self.vectors.nbytes

    def with_vectors(self, vectors):
        """Same ids and kind, new vectors (dimension may change)."""
        return EmbeddingMatrix(self.ids, vectors, self.kind)

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.intp)
        return EmbeddingMatrix(tuple(self.ids[i] for i in rows), self.vectors[rows], self.kind)

    def index_of(self):
        return {item: i for i, item in enumerate(self.ids)}

    def equals(self, other):
        return (
            isinstance(other, EmbeddingMatrix)
            and self.kind == other.kind
            and self.ids == other.ids
            and self.vectors.dtype == other.vectors.dtype
            and self.vectors.shape == other.vectors.shape
            and self.vectors.tobytes() == other.vectors.tobytes()
        )


@dataclass(frozen=True)
class RelevanceJudgments:
    """Map from query id to the non-empty frozenset of relevant document ids."""

    entries: Mapping[str, frozenset]

    def __post_init__(self):
        cleaned = {}
        for qid, docs in self.entries.items():
            docs = frozenset(str(d) for d in docs)
            if not docs:
                raise FormatError(f"query {qid!r} has an empty relevant set")
            cleaned[str(qid)] = docs
        object.__setattr__(self, "entries", MappingProxyType(cleaned))

    @classmethod
    def from_pairs(cls, pairs):
        entries = {}
        for qid, did in pairs:
            entries.setdefault(str(qid), set()).add(str(did))
        return cls(entries)

    def __getitem__(self, qid):
        return self.entries[qid]

    def __contains__(self, qid):
        return qid in self.entries

    def __len__(self):
        return len(self.entries)

    def relevant_count(self, qid):
        return len(self.entries[qid])

    def pairs(self):
        for qid in sorted(self.entries):
            for did in sorted(self.entries[qid]):
                yield qid, did


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    documents: EmbeddingMatrix
    queries: EmbeddingMatrix
    judgments: RelevanceJudgments

    def __post_init__(self):
        if self.documents.kind != DOCUMENT or self.queries.kind != QUERY:
            raise FormatError("bundle needs a document matrix and a query matrix")
        if self.documents.dim != self.queries.dim:
            raise DimensionMismatchError(
                f"documents have dim {self.documents.dim}, queries {self.queries.dim}")
        query_ids = set(self.queries.ids)
        doc_ids = set(self.documents.ids)
        for qid, docs in self.judgments.entries.items():
            if qid not in query_ids:
                raise UnknownIdError(f"unknown id: judgments reference query {qid!r}")
            missing = docs - doc_ids
            if missing:
                raise UnknownIdError(
                    f"unknown id: judgments reference document {min(missing)!r}")

    @property
    def dim(self):
        return self.documents.dim

    def replace(self, documents=None, queries=None):
        return DatasetBundle(documents if documents is not None else self.documents,
                             queries if queries is not None else self.queries,
                             self.judgments)

    def equals(self, other):
        return (self.documents.equals(other.documents)
                and self.queries.equals(other.queries)
                and dict(self.judgments.entries) == dict(other.judgments.entries))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _ids_path(path):
    path = Path(path)
    return path.with_name(path.name + ".ids")


def write_embeddings(matrix, path):
    """Write ``matrix`` to ``path`` plus the sibling ``.ids`` file."""
    path = Path(path)
    vectors = matrix.vectors
    if vectors.dtype not in _TAGS:
        vectors = vectors.astype(np.float64)
    tag = _TAGS[vectors.dtype]
    payload = np.ascontiguousarray(vectors, dtype=_DTYPES[tag])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, matrix.dim, matrix.n_items, tag))
        fh.write(payload.tobytes())
    with open(_ids_path(path), "w", encoding="utf-8") as fh:
        for item in matrix.ids:
            if "\n" in item or "\r" in item:
                raise FormatError(f"id {item!r} contains a newline")
            fh.write(item + "\n")


def read_embeddings(path, kind=DOCUMENT):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, dim, count, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if tag not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype tag {tag}")
    if dim == 0:
        raise FormatError(f"{path}: zero dimension")
    dtype = _DTYPES[tag]
    expected = count * dim * dtype.itemsize
    if len(raw) - _HEADER.size != expected:
        raise FormatError(
            f"{path}: payload has {len(raw) - _HEADER.size} bytes, header implies {expected}")
    vectors = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape(count, dim)
    vectors = vectors.astype(dtype.newbyteorder("="))
    ids_file = _ids_path(path)
    if not ids_file.exists():
        raise FormatError(f"{path}: missing id file {ids_file.name}")
    ids = ids_file.read_text(encoding="utf-8").splitlines()
    if len(ids) != count:
        raise FormatError(f"{ids_file}: {len(ids)} ids for {count} rows")
    return EmbeddingMatrix(tuple(ids), vectors, kind)


def write_qrels(judgments, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# query_id\tdoc_id\n")
        fh.writelines(f"{qid}\t{did}\n" for qid, did in judgments.pairs())


def read_qrels(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise FormatError(f"{path}:{lineno}: expected 'query_id<TAB>doc_id'")
            pairs.append((parts[0], parts[1]))
    return RelevanceJudgments.from_pairs(pairs)


def load_bundle(doc_path, query_path, qrels_path):
    """Load a bundle from an embedding file pair and a qrels TSV."""
    documents = read_embeddings(doc_path, DOCUMENT)
    queries = read_embeddings(query_path, QUERY)
    return DatasetBundle(documents, queries, read_qrels(qrels_path))


def save_bundle(bundle, directory):
    """Write ``documents``, ``queries`` (+ ``.ids``) and ``qrels.tsv`` into
    ``directory``. Returns the three paths in ``load_bundle`` order."""
    if bundle.documents.n_items == 0 or bundle.queries.n_items == 0:
        raise EmptyCollectionError("empty collection")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = (directory / DOCS_NAME, directory / QUERIES_NAME, directory / QRELS_NAME)
    write_embeddings(bundle.documents, paths[0])
    write_embeddings(bundle.queries, paths[1])
    write_qrels(bundle.judgments, paths[2])
    return paths


def load_bundle_dir(directory):
    directory = Path(directory)
    return load_bundle(directory / DOCS_NAME, directory / QUERIES_NAME, directory / QRELS_NAME)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of :func:`generate_synthetic`.

    The first seven fields define clustered data living in a random
    ``intrinsic_dim``-dimensional subspace. The remaining fields default to
    zero and add realistic nuisance structure:

    ``ambient_noise_sigma``
        isotropic Gaussian noise added in the ambient space;
    ``n_rogue_dims`` / ``rogue_sigma``
        coordinates carrying strong, uninformative noise (dominating dims);
    ``mean_offset``
        norm of a common mean added to every document, and of a different
        common mean added to every query;
    ``scale_jitter``
        std of a per-row log-normal scale factor;
    ``coord_skew``
        std of a per-coordinate log-normal gain on the embedded signal, so
        that coordinates differ in how much signal they carry. With the
        default 0 every coordinate is exchangeable.
    """

    n_clusters: int = 60
    intrinsic_dim: int = 32
    ambient_dim: int = 768
    docs_per_cluster: int = 20
    queries_per_cluster: int = 4
    noise_sigma: float = 0.8
    seed: int = 0
    ambient_noise_sigma: float = 0.0
    n_rogue_dims: int = 0
    rogue_sigma: float = 0.0
    mean_offset: float = 0.0
    scale_jitter: float = 0.0
    coord_skew: float = 0.0

    def __post_init__(self):
        for name in ("n_clusters", "intrinsic_dim", "ambient_dim",
                     "docs_per_cluster", "queries_per_cluster"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.intrinsic_dim > self.ambient_dim:
            raise ValueError("intrinsic_dim must not exceed ambient_dim")
        if not 0 <= self.n_rogue_dims <= self.ambient_dim:
            raise ValueError("n_rogue_dims must lie in [0, ambient_dim]")
        for name in ("noise_sigma", "ambient_noise_sigma", "rogue_sigma",
                     "mean_offset", "scale_jitter", "coord_skew"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value!r}")

    @classmethod
    def from_mapping(cls, mapping):
        defaults = cls()
        kwargs = {}
        for key, value in mapping.items():
            if not hasattr(defaults, key):
                raise ValueError(f"unknown synthetic parameter {key!r}")
            kwargs[key] = type(getattr(defaults, key))(value)
        return cls(**kwargs)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _random_unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def generate_synthetic(spec=None, **overrides):
    """Generate a clustered bundle whose intrinsic dimension is known.

    Documents are cluster centers plus Gaussian noise in the intrinsic space,
    mapped into the ambient space by a random matrix with orthonormal
    columns. Each query perturbs a randomly chosen member of one cluster and
    is judged relevant to every document of that cluster. The output is a
    pure function of ``spec``.
    """
    return _generate(spec, overrides)


def generate_distractors(spec, n, seed=0):
    """``n`` documents relevant to no query, drawn from fresh clusters in the
    same space (basis, nuisance noise and document offset) as the bundle
    that ``spec`` generates. Ids are ``x0, x1, ...``."""
    if isinstance(n, bool) or int(n) != n or n < 0:
        raise ValueError(f"distractor count must be a non-negative integer, got {n!r}")
    return _generate(spec, {}, n_distractors=int(n), distractor_seed=int(seed))


def _generate(spec, overrides, n_distractors=None, distractor_seed=0):
    if spec is None:
        spec = SyntheticSpec(**overrides)
    elif overrides:
        spec = SyntheticSpec(**{**spec.as_dict(), **overrides})
    rng = np.random.default_rng(spec.seed)
    k, dp, da = spec.n_clusters, spec.intrinsic_dim, spec.ambient_dim

    basis, r = np.linalg.qr(rng.standard_normal((da, dp)))
    basis *= np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    centers = rng.standard_normal((k, dp))

    n_docs = k * spec.docs_per_cluster
    n_queries = k * spec.queries_per_cluster
    doc_cluster = np.repeat(np.arange(k), spec.docs_per_cluster)
    query_cluster = np.repeat(np.arange(k), spec.queries_per_cluster)
    docs = centers[doc_cluster] + spec.noise_sigma * rng.standard_normal((n_docs, dp))
    member = rng.integers(0, spec.docs_per_cluster, size=n_queries)
    source = query_cluster * spec.docs_per_cluster + member
    queries = docs[source] + spec.noise_sigma * rng.standard_normal((n_queries, dp))

    docs = docs @ basis.T
    queries = queries @ basis.T

    # Nuisance draws happen unconditionally so that switching one of them on
    # never perturbs the base data.
    coord_sigma = np.full(da, spec.ambient_noise_sigma)
    rogue = rng.choice(da, size=spec.n_rogue_dims, replace=False)
    coord_sigma[rogue] = spec.rogue_sigma
    doc_noise = rng.standard_normal((n_docs, da))
    query_noise = rng.standard_normal((n_queries, da))
    doc_scale = np.exp(spec.scale_jitter * rng.standard_normal(n_docs))
    query_scale = np.exp(spec.scale_jitter * rng.standard_normal(n_queries))
    doc_offset = spec.mean_offset * _random_unit(rng, da)
    query_offset = spec.mean_offset * _random_unit(rng, da)
    if spec.coord_skew > 0:
        gain = np.exp(spec.coord_skew * rng.standard_normal(da))
        gain /= np.sqrt(np.mean(gain ** 2))
        docs = docs * gain
        queries = queries * gain
    else:
        gain = None

    if np.any(coord_sigma > 0):
        docs = docs + doc_noise * coord_sigma
        queries = queries + query_noise * coord_sigma
    docs = docs * doc_scale[:, None] + doc_offset
    queries = queries * query_scale[:, None] + query_offset

    if n_distractors is not None:
        # Extra documents from fresh clusters in the same space; a separate
        # generator keeps the base bundle untouched.
        drng = np.random.default_rng((spec.seed, 1 + distractor_seed))
        extra = drng.standard_normal((n_distractors, dp))
        extra = (extra + spec.noise_sigma * drng.standard_normal((n_distractors, dp))) @ basis.T
        if gain is not None:
            extra = extra * gain
        extra_noise = drng.standard_normal((n_distractors, da))
        extra_scale = np.exp(spec.scale_jitter * drng.standard_normal(n_distractors))
        if np.any(coord_sigma > 0):
            extra = extra + extra_noise * coord_sigma
        extra = extra * extra_scale[:, None] + doc_offset
        width = len(str(max(n_distractors - 1, 0)))
        return EmbeddingMatrix(tuple(f"x{i:0{width}d}" for i in range(n_distractors)),
                               extra, DOCUMENT)

    width = len(str(max(n_docs, n_queries) - 1))
    doc_ids = tuple(f"d{i:0{width}d}" for i in range(n_docs))
    query_ids = tuple(f"q{i:0{width}d}" for i in range(n_queries))
    by_cluster = [doc_ids[c * spec.docs_per_cluster:(c + 1) * spec.docs_per_cluster]
                  for c in range(k)]
    judgments = RelevanceJudgments(
        {qid: frozenset(by_cluster[c]) for qid, c in zip(query_ids, query_cluster)})
    return DatasetBundle(EmbeddingMatrix(doc_ids, docs, DOCUMENT),
                         EmbeddingMatrix(query_ids, queries, QUERY),
                         judgments)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    mean_l1: float
    std_l1: float
    mean_l2: float
    std_l2: float

    def as_dict(self):
        return {"mean_l1": self.mean_l1, "std_l1": self.std_l1,
                "mean_l2": self.mean_l2, "std_l2": self.std_l2}


def norm_stats(matrix):
    """Mean and population std of per-row L1 and L2 norms."""
    X = np.asarray(getattr(matrix, "vectors", matrix), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyCollectionError("norm_stats needs a non-empty matrix")
    l1 = np.abs(X).sum(axis=1)
    l2 = np.linalg.norm(X, axis=1)
    return NormStats(float(l1.mean()), float(l1.std()), float(l2.mean()), float(l2.std()))
