"""Precision reduction: half floats, 8-bit affine codes and sign bits.

Bit layout for the 1-bit scheme: dimension ``j`` of a row lives in byte
``j // 8`` at bit ``j % 8`` counted from the least significant bit. Padding
bits in the last byte are zero. A set bit means the coordinate was ``>= 0``
and dequantizes to ``1 - alpha``; a clear bit dequantizes to ``-alpha``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_2d_float, check_dim
from .exceptions import (
    DimensionMismatchError,
    EmptyCollectionError,
    FormatError,
    QuantizationOverflowError,
)
from .retrieval import INNER_PRODUCT, RetrievalRun, _id_order, top_k_smallest
from .store import DOCUMENT, EmbeddingMatrix, _ids_path

FP16 = "fp16"
INT8 = "int8"
BIT1 = "bit1"
SCHEMES = (FP16, INT8, BIT1)
BITS = {FP16: 16, INT8: 8, BIT1: 1}
ALPHAS = (0.0, 0.5)
INT8_LEVELS = 255

QMAGIC = b"VSQUANT1"
_QHEADER = struct.Struct("<8sBIQd")
_SCHEME_TAGS = {FP16: 0, INT8: 1, BIT1: 2}
_TAG_SCHEMES = {v: k for k, v in _SCHEME_TAGS.items()}


def row_nbytes(scheme, dim):
    return (dim * BITS[scheme] + 7) // 8


@dataclass(frozen=True, eq=False)
class QuantizedIndex:
    """Packed reduced-precision vectors.

    ``payload`` is a read-only ``uint8`` array of shape
    ``(n_items, row_nbytes(scheme, dim))``. ``scale`` and ``offset`` are set
    for int8 only; ``alpha`` matters for bit1 only.
    """

    scheme: str
    dim: int
    payload: np.ndarray
    ids: tuple
    kind: str = DOCUMENT
    alpha: float = 0.0
    scale: np.ndarray | None = None
    offset: np.ndarray | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        payload = np.asarray(self.payload, dtype=np.uint8)
        expected = row_nbytes(self.scheme, self.dim)
        if payload.ndim != 2 or payload.shape[1] != expected:
            raise FormatError(
                f"{self.scheme} payload rows must hold {expected} bytes, got shape {payload.shape}")
        if payload.shape[0] != len(self.ids):
            raise FormatError(f"{len(self.ids)} ids for {payload.shape[0]} rows")
        if self.scheme == BIT1:
            if self.alpha not in ALPHAS:
                raise ValueError(f"alpha must be one of {ALPHAS}")
            pad = expected * 8 - self.dim
            if pad and payload.size and np.any(payload[:, -1] >> (8 - pad)):
                raise FormatError("nonzero padding bits in bit1 payload")
        if self.scheme == INT8:
            for name in ("scale", "offset"):
                arr = getattr(self, name)
                if arr is None or np.shape(arr) != (self.dim,):
                    raise FormatError(f"int8 index needs a length-{self.dim} {name}")
                arr = np.array(arr, dtype=np.float64)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
        if payload.flags.writeable:
            payload = payload.copy()
            payload.flags.writeable = False
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n_items(self):
        return self.payload.shape[0]

    @property
    def bits_per_dim(self):
        return BITS[self.scheme]

    @property
    def payload_nbytes(self):
        return self.payload.nbytes

    def equals(self, other):
        same = (isinstance(other, QuantizedIndex) and self.scheme == other.scheme
                and self.dim == other.dim and self.ids == other.ids and self.kind == other.kind
                and self.alpha == other.alpha
                and self.payload.tobytes() == other.payload.tobytes())
        if same and self.scheme == INT8:
            same = (self.scale.tobytes() == other.scale.tobytes()
                    and self.offset.tobytes() == other.offset.tobytes())
        return same


def _split(matrix):
    if isinstance(matrix, EmbeddingMatrix):
        return matrix.vectors, matrix.ids, matrix.kind
    X = as_2d_float(matrix, allow_empty=True)
    return X, tuple(str(i) for i in range(X.shape[0])), DOCUMENT


# ---------------------------------------------------------------------------
# Quantizers
# ---------------------------------------------------------------------------

def fp16_codes(X):
    """Round to half precision (nearest, ties to even)."""
    X = np.asarray(X)
    with np.errstate(over="ignore"):
        half = X.astype(np.float16)
    overflow = np.isinf(half) & np.isfinite(X)
    if overflow.any():
        row = int(np.flatnonzero(overflow.any(axis=1))[0])
        raise QuantizationOverflowError(row)
    return half


def to_fp16(matrix):
    X, ids, kind = _split(matrix)
    half = fp16_codes(X)
    payload = np.ascontiguousarray(half, dtype="<f2").view(np.uint8).reshape(len(ids), 2 * X.shape[1])
    return QuantizedIndex(FP16, X.shape[1], payload, ids, kind)


def int8_params(X):
    """Per-dimension ``(offset, scale)``: the minimum and ``range / 255``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyCollectionError("cannot quantize an empty matrix to int8")
    lo = X.min(axis=0)
    return lo, (X.max(axis=0) - lo) / INT8_LEVELS


def int8_codes(X, offset, scale):
    X = np.asarray(X, dtype=np.float64)
    safe = np.where(scale > 0, scale, 1.0)
    codes = np.rint((X - offset) / safe)
    codes[:, scale == 0] = 0
    return np.clip(codes, 0, INT8_LEVELS).astype(np.uint8)


def int8_decode(codes, offset, scale):
    return offset + codes.astype(np.float64) * scale


def to_int8(matrix, params=None):
    """Affine 8-bit codes; ``params=(offset, scale)`` reuses fitted values."""
    X, ids, kind = _split(matrix)
    offset, scale = params if params is not None else int8_params(X)
    check_dim(X, len(offset))
    return QuantizedIndex(INT8, X.shape[1], int8_codes(X, offset, scale), ids, kind,
                          scale=scale, offset=offset)


def sign_bits(X):
    """Packed sign bits, LSB first; bit set iff coordinate ``>= 0``."""
    return np.packbits(np.asarray(X) >= 0, axis=1, bitorder="little")


def unpack_bits(payload, dim):
    return np.unpackbits(payload, axis=1, count=dim, bitorder="little")


def to_bit1(matrix, alpha=0.5):
    if alpha not in ALPHAS:
        raise ValueError(f"alpha must be one of {ALPHAS}")
    X, ids, kind = _split(matrix)
    return QuantizedIndex(BIT1, X.shape[1], sign_bits(X), ids, kind, alpha=float(alpha))


def quantize(matrix, scheme, alpha=0.5):
    if scheme == FP16:
        return to_fp16(matrix)
    if scheme == INT8:
        return to_int8(matrix)
    if scheme == BIT1:
        return to_bit1(matrix, alpha)
    raise ValueError(f"unknown scheme {scheme!r}")


def dequantize_array(index):
    if index.scheme == FP16:
        return index.payload.view("<f2").astype(np.float64)
    if index.scheme == INT8:
        return int8_decode(index.payload, index.offset, index.scale)
    return unpack_bits(index.payload, index.dim).astype(np.float64) - index.alpha


def dequantize(index):
    return EmbeddingMatrix(index.ids, dequantize_array(index), index.kind)


# ---------------------------------------------------------------------------
# Binary similarity
# ---------------------------------------------------------------------------

def hamming_distance(packed_a, packed_b):
    """Pairwise Hamming distances between packed rows, shape ``(n_a, n_b)``."""
    a = np.atleast_2d(packed_a)
    b = np.atleast_2d(packed_b)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"packed widths differ: {a.shape[1]} vs {b.shape[1]}")
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int64)
    for i, row in enumerate(a):
        out[i] = np.bitwise_count(np.bitwise_xor(b, row)).sum(axis=1, dtype=np.int64)
    return out


def hamming_ip(index, packed_query):
    """Inner products of ``+-0.5`` vectors from packed sign bits.

    Equals ``0.25 * (d - 2 h)`` with ``h`` the Hamming distance. A single
    packed row gives shape ``(n_items,)``; a 2-D batch gives
    ``(n_queries, n_items)``.
    """
    if index.scheme != BIT1 or index.alpha != 0.5:
        raise ValueError("hamming_ip needs a bit1 index with alpha=0.5")
    if isinstance(packed_query, QuantizedIndex):
        if packed_query.dim != index.dim:
            raise DimensionMismatchError(
                f"query dimension {packed_query.dim} differs from index dimension {index.dim}")
        packed_query = packed_query.payload
    q = np.asarray(packed_query, dtype=np.uint8)
    if q.shape[-1] != index.payload.shape[1]:
        raise DimensionMismatchError(
            f"query has {q.shape[-1]} packed bytes, index rows have {index.payload.shape[1]}")
    h = hamming_distance(q, index.payload)
    ip = 0.25 * (index.dim - 2.0 * h)
    return ip[0] if q.ndim == 1 else ip


def binary_search(index, queries, k):
    """Exact top-``k`` by Hamming distance (equivalently ``+-0.5`` inner
    product), ties broken by ascending document id."""
    if not isinstance(queries, QuantizedIndex) or queries.scheme != BIT1:
        raise ValueError("queries must be a bit1 QuantizedIndex")
    if queries.dim != index.dim:
        raise DimensionMismatchError(f"query dim {queries.dim} vs index dim {index.dim}")
    h = hamming_distance(queries.payload, index.payload)
    order = _id_order(index.ids)
    if order is not None:
        h = h[:, order]
    k = min(int(k), index.n_items)
    rows = top_k_smallest(h.astype(np.float64), k)
    scores = 0.25 * (index.dim - 2.0 * np.take_along_axis(h, rows, axis=1))
    if order is not None:
        rows = order[rows]
    return RetrievalRun(queries.ids, index.ids, rows, scores, INNER_PRODUCT)


# ---------------------------------------------------------------------------
# Size accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    """One pipeline stage as seen by the size accounting.

    ``aux_params`` counts stored float32 parameters that are shared by all
    items (projection matrices, means, int8 scales and offsets).
    """

    name: str
    out_dim: int
    bits: int = 32
    aux_params: int = 0


@dataclass(frozen=True)
class SizeReport:
    original_bits: int
    compressed_bits: int
    amortized_bits: int
    stages: tuple = field(default_factory=tuple)

    @property
    def ratio(self):
        return self.original_bits / self.compressed_bits

    @property
    def rounded_ratio(self):
        return round(self.ratio)

    def label(self):
        return f"{self.rounded_ratio}x"

    def as_dict(self):
        return {"original_bits": self.original_bits, "compressed_bits": self.compressed_bits,
                "amortized_bits": self.amortized_bits, "ratio": self.ratio,
                "rounded_ratio": self.rounded_ratio,
                "stages": [{"name": s.name, "out_dim": s.out_dim, "bits": s.bits,
                            "aux_params": s.aux_params} for s in self.stages]}


def _as_stage(item):
    if isinstance(item, Stage):
        return item
    if isinstance(item, dict):
        return Stage(**item)
    return Stage(*item)


def size_report(stages, d, n_items=1):
    """Storage of ``n_items`` vectors before and after the given stages.

    The stored dimension is the last stage's ``out_dim`` and the stored width
    the last stage's ``bits``; stages without an explicit ``bits`` keep 32.
    Shared parameters are reported in ``amortized_bits`` and not counted in
    the ratio.
    """
    stages = tuple(_as_stage(s) for s in stages)
    out_dim, bits = d, 32
    for s in stages:
        if s.out_dim < 1 or s.bits not in (1, 8, 16, 32):
            raise ValueError(f"invalid stage {s}")
        if s.out_dim > out_dim:
            raise DimensionMismatchError(f"stage {s.name!r} widens {out_dim} to {s.out_dim}")
        out_dim, bits = s.out_dim, s.bits
    return SizeReport(original_bits=n_items * d * 32,
                      compressed_bits=n_items * out_dim * bits,
                      amortized_bits=32 * sum(s.aux_params for s in stages),
                      stages=stages)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def write_quantized(index, path):
    """Header ``<8sBIQd`` (magic, scheme tag, dim, count, alpha), then for
    int8 the float64 offsets and scales, then the packed rows. Ids go to the
    sibling ``.ids`` file."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_QHEADER.pack(QMAGIC, _SCHEME_TAGS[index.scheme], index.dim, index.n_items,
                               index.alpha))
        if index.scheme == INT8:
            fh.write(index.offset.astype("<f8").tobytes())
            fh.write(index.scale.astype("<f8").tobytes())
        fh.write(index.payload.tobytes())
    with open(_ids_path(path), "w", encoding="utf-8") as fh:
        fh.write("".join(f"{i}\n" for i in index.ids))
    with open(path.with_name(path.name + ".kind"), "w", encoding="utf-8") as fh:
        fh.write(index.kind + "\n")


def read_quantized(path):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _QHEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, tag, dim, count, alpha = _QHEADER.unpack_from(raw)
    if magic != QMAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if tag not in _TAG_SCHEMES:
        raise FormatError(f"{path}: unknown scheme tag {tag}")
    scheme = _TAG_SCHEMES[tag]
    pos = _QHEADER.size
    scale = offset = None
    if scheme == INT8:
        need = pos + 16 * dim
        if len(raw) < need:
            raise FormatError(f"{path}: truncated int8 parameters")
        offset = np.frombuffer(raw, "<f8", dim, pos).astype(np.float64)
        scale = np.frombuffer(raw, "<f8", dim, pos + 8 * dim).astype(np.float64)
        pos = need
    width = row_nbytes(scheme, dim)
    if len(raw) - pos != count * width:
        raise FormatError(
            f"{path}: payload has {len(raw) - pos} bytes, header implies {count * width}")
    payload = np.frombuffer(raw, np.uint8, offset=pos).reshape(count, width)
    ids = _ids_path(path).read_text(encoding="utf-8").splitlines()
    kind_file = path.with_name(path.name + ".kind")
    kind = kind_file.read_text(encoding="utf-8").strip() if kind_file.exists() else DOCUMENT
    return QuantizedIndex(scheme, dim, payload, tuple(ids), kind, alpha=alpha,
                          scale=scale, offset=offset)


# ---------------------------------------------------------------------------
# Estimator API
# ---------------------------------------------------------------------------

class PrecisionReducer(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Quantize then dequantize, so downstream search sees the stored values.

    Parameters
    ----------
    scheme : {"fp16", "int8", "bit1"}
    alpha : {0.0, 0.5}
        Offset of the 1-bit scheme.
    """

    def __init__(self, scheme=INT8, alpha=0.5):
        self.scheme = scheme
        self.alpha = alpha

    def fit(self, X, y=None):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == BIT1 and self.alpha not in ALPHAS:
            raise ValueError(f"alpha must be one of {ALPHAS}")
        X = as_2d_float(X)
        if self.scheme == INT8:
            self.offset_, self.scale_ = int8_params(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = as_2d_float(X)
        check_dim(X, self.n_features_in_)
        if self.scheme == FP16:
            return fp16_codes(X).astype(np.float64)
        if self.scheme == INT8:
            return int8_decode(int8_codes(X, self.offset_, self.scale_), self.offset_, self.scale_)
        return (X >= 0).astype(np.float64) - self.alpha

    def quantize(self, matrix):
        check_is_fitted(self, "n_features_in_")
        if self.scheme == INT8:
            return to_int8(matrix, (self.offset_, self.scale_))
        return quantize(matrix, self.scheme, self.alpha)
