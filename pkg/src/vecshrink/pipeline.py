"""Composable compression pipeline and its evaluation report.

Stage order: ``pre -> reducer -> mid -> quantizer -> post``. The reducer is
learned once and applied identically to queries and documents; every
pre/mid/post statistic is fitted per collection on the vectors it is
applied to, and quantization parameters likewise. The post stage therefore
sees the dequantized vectors.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import AutoencoderReducer
from .pca import DEFAULT_SCALES, FIT_SOURCES, PCAReducer, pooled_rows
from .preprocess import PreprocessSpec, apply_spec
from .projection import (
    GREEDY_DROP,
    MOST_IMPORTANT,
    GaussianProjection,
    GreedyDimensionDrop,
    RandomDimensionDrop,
    SparseProjection,
)
from .quantize import (
    ALPHAS,
    BITS,
    INT8,
    SCHEMES,
    Stage,
    dequantize,
    quantize,
    size_report,
)
from .retrieval import INNER_PRODUCT, L2, RetrievalConfig, evaluate, hit_distribution

REDUCERS = ("none", "drop", GREEDY_DROP, "gaussian", "sparse", "pca", "autoencoder")


@dataclass(frozen=True)
class ReducerSpec:
    """Which reducer to build and how to fit it.

    ``fit_samples`` limits the rows used for fitting to a seeded random
    subset; ``options`` carries kind-specific settings (``component_scales``
    for PCA; ``variant``, ``epochs``, ``early_stop_tol``, ``l1``, ``batch_size``,
    ``learning_rate``, ``hidden`` for autoencoders; ``retain``,
    ``query_subsample``, ``post`` for greedy dropping).
    """

    kind: str = "none"
    dim: int | None = None
    seed: int = 0
    fit_source: str = "documents"
    fit_samples: int | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in REDUCERS:
            raise ValueError(f"unknown reducer {self.kind!r}; choose from {REDUCERS}")
        if self.kind != "none" and (self.dim is None or self.dim < 1):
            raise ValueError(f"reducer {self.kind!r} needs a positive dim")
        if self.fit_source not in FIT_SOURCES:
            raise ValueError(f"fit_source must be one of {FIT_SOURCES}")
        if self.fit_samples is not None and self.fit_samples < 1:
            raise ValueError("fit_samples must be positive")

    def build(self):
        opts = dict(self.options)
        if self.kind == "drop":
            return RandomDimensionDrop(self.dim, random_state=self.seed)
        if self.kind == "gaussian":
            return GaussianProjection(self.dim, random_state=self.seed)
        if self.kind == "sparse":
            return SparseProjection(self.dim, random_state=self.seed)
        if self.kind == GREEDY_DROP:
            return GreedyDimensionDrop(self.dim, retain=opts.get("retain", MOST_IMPORTANT),
                                       post=tuple(opts.get("post", ("center", "normalize"))),
                                       query_subsample=opts.get("query_subsample"),
                                       random_state=self.seed)
        if self.kind == "pca":
            scales = opts.get("component_scales")
            return PCAReducer(self.dim, component_scales=scales, fit_source=self.fit_source)
        if self.kind == "autoencoder":
            return AutoencoderReducer(variant=opts.get("variant", "linear"), bottleneck=self.dim,
                                      hidden=tuple(opts.get("hidden", (512, 256))),
                                      batch_size=opts.get("batch_size", 128),
                                      learning_rate=opts.get("learning_rate", 1e-3),
                                      l1=opts.get("l1"), epochs=opts.get("epochs", 50),
                                      early_stop_tol=opts.get("early_stop_tol", 1e-4),
                                      random_state=self.seed)
        return None

    def describe(self):
        out = {"kind": self.kind}
        if self.kind != "none":
            out.update(dim=self.dim, seed=self.seed, fit_source=self.fit_source,
                       fit_samples=self.fit_samples)
            out.update({k: _plain(v) for k, v in sorted(self.options.items())})
        return out


@dataclass(frozen=True)
class QuantizerSpec:
    scheme: str = "none"
    alpha: float = 0.5

    def __post_init__(self):
        if self.scheme != "none" and self.scheme not in SCHEMES:
            raise ValueError(f"unknown quantizer {self.scheme!r}")
        if self.alpha not in ALPHAS:
            raise ValueError(f"alpha must be one of {ALPHAS}")

    @property
    def bits(self):
        return 32 if self.scheme == "none" else BITS[self.scheme]

    def describe(self):
        out = {"scheme": self.scheme}
        if self.scheme == "bit1":
            out["alpha"] = self.alpha
        return out


def _plain(value):
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _aux_params(reducer, d, d_out):
    if reducer is None:
        return 0
    if isinstance(reducer, PCAReducer):
        return d * d_out + d + d_out
    if isinstance(reducer, AutoencoderReducer):
        return reducer.parameter_counts()[0]
    proj = reducer.projection_
    return proj.out_dim if proj.indices is not None else d * d_out


class CompressionPipeline:
    """Pre-process, reduce, quantize and post-process a bundle.

    Parameters
    ----------
    pre, mid, post : PreprocessSpec or str
        Steps before the reducer, between reducer and quantizer, and last.
    reducer : ReducerSpec
    quantizer : QuantizerSpec
    """

    def __init__(self, pre=(), reducer=None, mid=(), quantizer=None, post=()):
        self.pre = pre if isinstance(pre, PreprocessSpec) else PreprocessSpec.parse(pre, "pre")
        self.mid = mid if isinstance(mid, PreprocessSpec) else PreprocessSpec.parse(mid, "mid")
        self.post = post if isinstance(post, PreprocessSpec) else PreprocessSpec.parse(post, "post")
        self.reducer = reducer or ReducerSpec()
        self.quantizer = quantizer or QuantizerSpec()
        self.model_ = None
        self.timings_ = {}

    def describe(self):
        return {"pre": list(self.pre.steps), "reducer": self.reducer.describe(),
                "mid": list(self.mid.steps), "quantizer": self.quantizer.describe(),
                "post": list(self.post.steps)}

    # -- fitting -----------------------------------------------------------
    def fit_rows(self, bundle):
        rows = pooled_rows(bundle.documents.vectors, bundle.queries.vectors,
                           self.reducer.fit_source)
        n = self.reducer.fit_samples
        if n is not None and n < rows.shape[0]:
            rng = np.random.default_rng(self.reducer.seed)
            rows = rows[np.sort(rng.choice(rows.shape[0], size=n, replace=False))]
        return rows

    def fit(self, bundle, retrieval=None):
        """Learn the reducer on ``bundle`` (pre-processed first)."""
        t0 = time.perf_counter()
        pre = apply_spec(self.pre, bundle)
        self.in_dim_ = bundle.dim
        model = self.reducer.build()
        if model is not None:
            if self.reducer.dim > bundle.dim:
                raise ValueError(
                    f"reducer dim {self.reducer.dim} exceeds input dimension {bundle.dim}")
            if isinstance(model, GreedyDimensionDrop):
                model.fit_bundle(pre, retrieval)
            else:
                model.fit(self.fit_rows(pre))
        self.model_ = model
        self.timings_["fit"] = time.perf_counter() - t0
        return self

    @property
    def out_dim(self):
        return self.reducer.dim if self.model_ is not None else self.in_dim_

    # -- applying ----------------------------------------------------------
    def _reduce(self, matrix):
        if self.model_ is None:
            return matrix
        return matrix.with_vectors(self.model_.transform(matrix.vectors))

    def _quantize(self, matrix):
        if self.quantizer.scheme == "none":
            return matrix
        return dequantize(quantize(matrix, self.quantizer.scheme, self.quantizer.alpha))

    def transform(self, bundle):
        """Compressed bundle as seen by search (dequantized floats)."""
        if not hasattr(self, "in_dim_"):
            raise RuntimeError("pipeline is not fitted")
        t0 = time.perf_counter()
        out = apply_spec(self.pre, bundle)
        out = out.replace(documents=self._reduce(out.documents),
                          queries=self._reduce(out.queries))
        out = apply_spec(self.mid, out)
        out = out.replace(documents=self._quantize(out.documents),
                          queries=self._quantize(out.queries))
        out = apply_spec(self.post, out)
        self.timings_["transform"] = time.perf_counter() - t0
        return out

    def quantized_documents(self, bundle):
        """The stored form of the documents (a QuantizedIndex) when a
        quantizer is configured."""
        if self.quantizer.scheme == "none":
            raise ValueError("pipeline has no quantizer")
        out = apply_spec(self.pre, bundle)
        docs = self._reduce(out.documents)
        if self.mid.steps:
            docs = apply_spec(self.mid, out.replace(documents=docs,
                                                   queries=self._reduce(out.queries))).documents
        return quantize(docs, self.quantizer.scheme, self.quantizer.alpha)

    # -- accounting --------------------------------------------------------
    def stages(self):
        d = self.in_dim_
        stages = []
        if self.model_ is not None:
            stages.append(Stage(self.reducer.kind, self.out_dim, 32,
                                _aux_params(self.model_, d, self.out_dim)))
        if self.quantizer.scheme != "none":
            aux = 2 * self.out_dim if self.quantizer.scheme == INT8 else 0
            stages.append(Stage(self.quantizer.scheme, self.out_dim, self.quantizer.bits, aux))
        return stages

    def size_report(self, n_items=1):
        return size_report(self.stages(), self.in_dim_, n_items)

    def reconstruction_loss(self, bundle):
        """Mean squared reconstruction error of the reducer on the
        (pre-processed) fit rows, or ``None`` when it has no inverse."""
        if self.model_ is None or not hasattr(self.model_, "inverse_transform"):
            return None
        X = self.fit_rows(apply_spec(self.pre, bundle))
        return float(np.mean((self.model_.inverse_transform(self.model_.transform(X)) - X) ** 2))

    # -- evaluation --------------------------------------------------------
    def evaluate(self, bundle, retrieval=None, metrics=(INNER_PRODUCT, L2), eval_bundle=None):
        """Fit on ``bundle`` if needed, then search ``eval_bundle`` (default
        ``bundle``) under every metric and return an :class:`EvalReport`."""
        retrieval = retrieval or RetrievalConfig()
        if not hasattr(self, "in_dim_"):
            self.fit(bundle, retrieval)
        target = eval_bundle if eval_bundle is not None else bundle
        compressed = self.transform(target)
        scores, hits = {}, None
        t0 = time.perf_counter()
        for metric in metrics:
            rp, run = evaluate(compressed.queries, compressed.documents, target.judgments,
                               retrieval.with_metric(metric))
            scores[metric] = rp
            if hits is None:
                hits = hit_distribution(run, target.judgments)
        self.timings_["search"] = time.perf_counter() - t0
        return EvalReport(
            pipeline=self.describe(),
            retrieval=retrieval.describe(),
            r_precision=scores,
            compression=self.size_report(target.documents.n_items).as_dict(),
            reconstruction_loss=self.reconstruction_loss(bundle),
            hit_histogram=[int(c) for c in hits.histogram],
            n_documents=target.documents.n_items,
            n_queries=len(hits.query_ids),
            timings=dict(self.timings_),
        )


TSV_COLUMNS = ("label", "reducer", "dim", "quantizer", "pre", "post", "rp_inner_product",
               "rp_l2", "compression", "reconstruction_loss", "n_documents")


@dataclass
class EvalReport:
    """Outcome of one pipeline evaluation. ``timings`` (seconds per stage)
    is the only non-deterministic field and is kept out of
    :meth:`deterministic_dict`."""

    pipeline: dict
    retrieval: dict
    r_precision: dict
    compression: dict
    reconstruction_loss: float | None
    hit_histogram: list
    n_documents: int
    n_queries: int
    timings: dict = field(default_factory=dict)
    label: str = ""
    extra: dict = field(default_factory=dict)

    def deterministic_dict(self):
        return {"label": self.label, "pipeline": self.pipeline, "retrieval": self.retrieval,
                "r_precision": self.r_precision, "compression": self.compression,
                "reconstruction_loss": self.reconstruction_loss,
                "hit_histogram": self.hit_histogram, "n_documents": self.n_documents,
                "n_queries": self.n_queries, "extra": self.extra}

    def as_dict(self):
        out = self.deterministic_dict()
        out["timings"] = self.timings
        return out

    def to_json(self, include_timings=True):
        data = self.as_dict() if include_timings else self.deterministic_dict()
        return json.dumps(data, indent=2, sort_keys=True)

    def tsv_row(self):
        p = self.pipeline
        loss = "" if self.reconstruction_loss is None else f"{self.reconstruction_loss:.9g}"
        return (self.label, p["reducer"]["kind"], str(p["reducer"].get("dim", "")),
                p["quantizer"]["scheme"], ",".join(p["pre"]) or "none",
                ",".join(p["post"]) or "none",
                f"{self.r_precision.get(INNER_PRODUCT, float('nan')):.6f}",
                f"{self.r_precision.get(L2, float('nan')):.6f}",
                f"{self.compression['rounded_ratio']}x", loss, str(self.n_documents))


def reports_tsv(reports):
    lines = ["\t".join(TSV_COLUMNS)]
    lines.extend("\t".join(r.tsv_row()) for r in reports)
    return "\n".join(lines) + "\n"


__all__ = [
    "DEFAULT_SCALES",
    "REDUCERS",
    "CompressionPipeline",
    "EvalReport",
    "QuantizerSpec",
    "ReducerSpec",
    "reports_tsv",
]
