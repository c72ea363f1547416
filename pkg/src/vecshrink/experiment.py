"""Config-driven experiments: single runs, dimension sweeps, distractor
ablations and the reconstruction-loss pitfall demo.

Configs are INI files. Every validation problem raises
:class:`~vecshrink.exceptions.ConfigError` naming ``section.key`` and the
line it came from. All randomness derives from the seeds in the config, so
a rerun reproduces every report field except ``timings``, which is written
to its own file.
"""

from __future__ import annotations

import configparser
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autoencoder import L1_DEFAULT
from .exceptions import ConfigError
from .pipeline import (
    REDUCERS,
    CompressionPipeline,
    QuantizerSpec,
    ReducerSpec,
    reports_tsv,
)
from .preprocess import PreprocessSpec
from .retrieval import (
    FLAT,
    INNER_PRODUCT,
    IVF,
    L2,
    IVFParams,
    RetrievalConfig,
    build_index,
    canonical_metric,
    evaluate,
    hit_distribution,
    search,
)
from .serialization import save_model
from .store import (
    DatasetBundle,
    EmbeddingMatrix,
    SyntheticSpec,
    generate_distractors,
    generate_synthetic,
    load_bundle,
    load_bundle_dir,
    read_embeddings,
)

SCHEMA = {
    "experiment": {"name", "seed"},
    "data": {"source", "dir", "documents", "queries", "qrels"},
    "synthetic": set(SyntheticSpec().as_dict()),
    "preprocess": {"pre", "mid", "post"},
    "reducer": {"kind", "dim", "seed", "fit_source", "fit_samples", "component_scales",
                "variant", "epochs", "early_stop_tol", "l1", "batch_size", "learning_rate", "hidden", "retain",
                "query_subsample", "greedy_post"},
    "quantizer": {"scheme", "alpha"},
    "retrieval": {"metrics", "search", "nlist", "nprobe", "kmeans_iters", "scale_ivf",
                  "k"},
    "sweep": {"dims"},
    "ablation": {"extra_docs", "pool", "seed"},
}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _line_map(text):
    """``{(section, key): line}`` for every key in ``text`` (1-based)."""
    lines, section = {}, None
    header = re.compile(r"^\s*\[([^\]]+)\]")
    entry = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")
    for number, raw in enumerate(text.splitlines(), 1):
        m = header.match(raw)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), number)
            continue
        m = entry.match(raw)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), number)
    return lines


class _Reader:
    def __init__(self, parser, lines):
        self.parser = parser
        self.lines = lines

    def error(self, section, key, message):
        return ConfigError(message, field=f"{section}.{key}" if key else section,
                           line=self.lines.get((section, key)))

    def raw(self, section, key):
        if self.parser.has_option(section, key):
            value = self.parser.get(section, key).strip()
            return value if value != "" else None
        return None

    def get(self, section, key, convert=str, default=None, check=None, what=None):
        value = self.raw(section, key)
        if value is None:
            return default
        try:
            out = convert(value)
        except (TypeError, ValueError) as exc:
            raise self.error(section, key, f"cannot parse {value!r}: {exc}") from None
        if check is not None and not check(out):
            raise self.error(section, key, f"invalid value {value!r}" + (f": {what}" if what else ""))
        return out

    def choice(self, section, key, options, default):
        return self.get(section, key, lambda s: s.lower(), default, lambda v: v in options,
                        f"choose from {', '.join(options)}")


def _int(value):
    if re.fullmatch(r"[+-]?\d+", value) is None:
        raise ValueError("expected an integer")
    return int(value)


def _bool(value):
    low = value.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _int_list(value):
    return [_int(v) for v in re.split(r"[,\s]+", value.strip()) if v]


def _float_list(value):
    return tuple(float(v) for v in re.split(r"[,\s]+", value.strip()) if v)


def _optional_float(value):
    return None if value.lower() in ("none", "off", "false") else float(value)


def _l1(value):
    return L1_DEFAULT if value.lower() in ("true", "on", "default") else _optional_float(value)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    source: str = "synthetic"
    data_dir: str | None = None
    documents: str | None = None
    queries: str | None = None
    qrels: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    pre: PreprocessSpec = field(default_factory=PreprocessSpec)
    mid: PreprocessSpec = field(default_factory=lambda: PreprocessSpec((), "mid"))
    post: PreprocessSpec = field(default_factory=lambda: PreprocessSpec((), "post"))
    reducer: ReducerSpec = field(default_factory=ReducerSpec)
    quantizer: QuantizerSpec = field(default_factory=QuantizerSpec)
    metrics: tuple = (INNER_PRODUCT, L2)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    scale_ivf: bool = True
    sweep_dims: tuple = ()
    extra_docs: tuple = ()
    distractor_pool: str | None = None
    ablation_seed: int = 0
    base_dir: str = "."

    def pipeline(self):
        return CompressionPipeline(self.pre, self.reducer, self.mid, self.quantizer, self.post)

    def with_reducer_dim(self, dim):
        return replace(self, reducer=replace(self.reducer, dim=dim))

    def reseeded(self, seed):
        """Copy with every derived seed (data, reducer, IVF, ablation) set
        to ``seed``."""
        seed = int(seed)
        return replace(self, seed=seed, synthetic=replace(self.synthetic, seed=seed),
                       reducer=replace(self.reducer, seed=seed),
                       retrieval=replace(self.retrieval, ivf=replace(self.retrieval.ivf, seed=seed)),
                       ablation_seed=seed)

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def describe(self):
        out = {"name": self.name, "seed": self.seed, "source": self.source}
        if self.source == "synthetic":
            out["synthetic"] = self.synthetic.as_dict()
        else:
            out["data"] = {k: v for k, v in (("dir", self.data_dir), ("documents", self.documents),
                                             ("queries", self.queries), ("qrels", self.qrels)) if v}
        return out


def parse_config(text, seed=None, base_dir="."):
    """Parse INI ``text``; ``seed`` overrides ``[experiment] seed``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}",
                          line=line) from None
    lines = _line_map(text)
    rd = _Reader(parser, lines)
    for section in parser.sections():
        if section not in SCHEMA:
            raise rd.error(section, None, f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in SCHEMA[section]:
                raise rd.error(section, key, f"unknown key {key!r}")

    base_seed = rd.get("experiment", "seed", _int, 0)
    if seed is not None:
        base_seed = int(seed)
    name = rd.get("experiment", "name", str, "experiment")

    source = rd.choice("data", "source", ("synthetic", "files"), "synthetic")
    data = {k: rd.get("data", k) for k in ("dir", "documents", "queries", "qrels")}
    if source == "files" and not data["dir"] and not all(
            data[k] for k in ("documents", "queries", "qrels")):
        raise rd.error("data", "source",
                       "source=files needs either dir or documents, queries and qrels")

    synth_kwargs = {}
    defaults = SyntheticSpec()
    for key in SCHEMA["synthetic"]:
        if rd.raw("synthetic", key) is not None:
            kind = type(getattr(defaults, key))
            synth_kwargs[key] = rd.get("synthetic", key, _int if kind is int else float)
    synth_kwargs.setdefault("seed", base_seed)
    try:
        synthetic = SyntheticSpec(**synth_kwargs)
    except ValueError as exc:
        bad = next((k for k in synth_kwargs if k in str(exc)), None)
        raise rd.error("synthetic", bad, str(exc)) from None

    steps = {}
    for key in ("pre", "mid", "post"):
        try:
            steps[key] = PreprocessSpec.parse(rd.get("preprocess", key, str, ""), key)
        except ValueError as exc:
            raise rd.error("preprocess", key, str(exc)) from None

    kind = rd.choice("reducer", "kind", REDUCERS, "none")
    dim = rd.get("reducer", "dim", _int, None, lambda v: v >= 1, "must be positive")
    if kind != "none" and dim is None:
        raise rd.error("reducer", "dim", f"reducer {kind!r} needs dim")
    options = {}
    if kind == "pca" and rd.raw("reducer", "component_scales") is not None:
        scales = rd.get("reducer", "component_scales", _float_list)
        if not all(0 < s <= 1 for s in scales) or (dim is not None and len(scales) > dim):
            raise rd.error("reducer", "component_scales",
                           "factors must lie in (0, 1] and number at most dim")
        options["component_scales"] = scales
    if kind == "autoencoder":
        options["variant"] = rd.choice("reducer", "variant",
                                       ("linear", "deep", "shallow_decoder"), "linear")
        options["epochs"] = rd.get("reducer", "epochs", _int, 50, lambda v: v >= 1, "must be positive")
        options["early_stop_tol"] = rd.get("reducer", "early_stop_tol", _optional_float, 1e-4,
                                           lambda v: v is None or v >= 0, "must be non-negative")
        options["batch_size"] = rd.get("reducer", "batch_size", _int, 128, lambda v: v >= 1,
                                       "must be positive")
        options["learning_rate"] = rd.get("reducer", "learning_rate", float, 1e-3,
                                          lambda v: v > 0, "must be positive")
        options["l1"] = rd.get("reducer", "l1", _l1, None,
                               lambda v: v is None or v >= 0, "must be non-negative")
        hidden = rd.get("reducer", "hidden", _int_list, [512, 256],
                        lambda v: len(v) == 2 and min(v) >= 1, "two positive widths")
        options["hidden"] = tuple(hidden)
    if kind == "greedy_drop":
        options["retain"] = rd.choice("reducer", "retain", ("most_important", "literal"),
                                      "most_important")
        options["query_subsample"] = rd.get("reducer", "query_subsample", _int, None,
                                            lambda v: v >= 1, "must be positive")
        try:
            options["post"] = PreprocessSpec.parse(
                rd.get("reducer", "greedy_post", str, "center,normalize"), "post").steps
        except ValueError as exc:
            raise rd.error("reducer", "greedy_post", str(exc)) from None
    reducer = ReducerSpec(
        kind=kind, dim=dim if kind != "none" else None,
        seed=rd.get("reducer", "seed", _int, base_seed),
        fit_source=rd.choice("reducer", "fit_source", ("documents", "queries", "both"),
                             "documents"),
        fit_samples=rd.get("reducer", "fit_samples", _int, None, lambda v: v >= 1,
                           "must be positive"),
        options=options)

    scheme = rd.choice("quantizer", "scheme", ("none", "fp16", "int8", "bit1"), "none")
    alpha = rd.get("quantizer", "alpha", float, 0.5, lambda v: v in (0.0, 0.5), "alpha is 0 or 0.5")
    quantizer = QuantizerSpec(scheme, alpha)

    metrics = rd.get("retrieval", "metrics", lambda s: tuple(
        canonical_metric(m) for m in re.split(r"[,\s]+", s.strip()) if m),
        (INNER_PRODUCT, L2), lambda v: len(v) > 0, "at least one metric")
    search_kind = rd.choice("retrieval", "search", (FLAT, IVF), FLAT)
    nlist = rd.get("retrieval", "nlist", _int, 200, lambda v: v >= 1, "must be positive")
    nprobe = rd.get("retrieval", "nprobe", _int, 100, lambda v: v >= 1, "must be positive")
    if nprobe > nlist:
        raise rd.error("retrieval", "nprobe", f"nprobe {nprobe} exceeds nlist {nlist}")
    iters = rd.get("retrieval", "kmeans_iters", _int, 25, lambda v: v >= 1, "must be positive")
    k = rd.get("retrieval", "k", lambda s: s if s == "r_precision" else _int(s), "r_precision",
               lambda v: v == "r_precision" or v >= 1, "r_precision or a positive integer")
    retrieval = RetrievalConfig(metrics[0], search_kind, IVFParams(nlist, nprobe, iters, base_seed), k)

    dims = tuple(rd.get("sweep", "dims", _int_list, [], lambda v: all(x >= 1 for x in v),
                        "dims must be positive"))
    extra = tuple(rd.get("ablation", "extra_docs", _int_list, [],
                         lambda v: all(x >= 0 for x in v), "counts must be non-negative"))

    return ExperimentConfig(
        name=name, seed=base_seed, source=source, data_dir=data["dir"],
        documents=data["documents"], queries=data["queries"], qrels=data["qrels"],
        synthetic=synthetic, pre=steps["pre"], mid=steps["mid"], post=steps["post"],
        reducer=reducer, quantizer=quantizer, metrics=metrics, retrieval=retrieval,
        scale_ivf=rd.get("retrieval", "scale_ivf", _bool, True),
        sweep_dims=dims, extra_docs=extra, distractor_pool=rd.get("ablation", "pool"),
        ablation_seed=rd.get("ablation", "seed", _int, base_seed), base_dir=str(base_dir))


def load_config(path, seed=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, seed=seed, base_dir=path.parent)


def _as_config(config, seed=None):
    if isinstance(config, ExperimentConfig):
        return config if seed is None else config.reseeded(seed)
    return load_config(config, seed=seed)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

def load_data(config):
    if config.source == "synthetic":
        return generate_synthetic(config.synthetic)
    if config.data_dir:
        return load_bundle_dir(config.resolve(config.data_dir))
    return load_bundle(config.resolve(config.documents), config.resolve(config.queries),
                       config.resolve(config.qrels))


def retrieval_for(config, n_docs):
    rc = config.retrieval
    if rc.search == IVF and config.scale_ivf:
        rc = replace(rc, ivf=rc.ivf.scaled_for(n_docs))
    return rc


def _check_dims(config, bundle):
    if config.reducer.kind != "none" and config.reducer.dim > bundle.dim:
        raise ConfigError(f"dim {config.reducer.dim} exceeds data dimension {bundle.dim}",
                          field="reducer.dim")


def _evaluate(config, bundle, eval_bundle=None, pipeline=None):
    rc = retrieval_for(config, (eval_bundle or bundle).documents.n_items)
    pipeline = pipeline or config.pipeline()
    if not hasattr(pipeline, "in_dim_"):
        pipeline.fit(bundle, rc)
    report = pipeline.evaluate(bundle, rc, config.metrics, eval_bundle=eval_bundle)
    report.label = config.name
    report.extra["experiment"] = config.describe()
    return report, pipeline


def write_report(report, out_dir, stem="report"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(report.to_json(include_timings=False) + "\n", encoding="utf-8")
    (out / f"{stem}.tsv").write_text(reports_tsv([report]), encoding="utf-8")
    (out / f"{stem}.timings.json").write_text(
        json.dumps(report.timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_hits(pipeline, bundle, config, path):
    """Per-query hit counts of the compressed run under the first metric."""
    compressed = pipeline.transform(bundle)
    rc = retrieval_for(config, bundle.documents.n_items)
    _, run = evaluate(compressed.queries, compressed.documents, bundle.judgments, rc)
    dist = hit_distribution(run, bundle.judgments)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_id\thits\trelevant\n")
        fh.writelines(f"{qid}\t{int(h)}\t{int(r)}\n"
                      for qid, h, r in zip(dist.query_ids, dist.hits, dist.relevant))
    return dist


def run_experiment(config, out_dir=None, seed=None):
    """Run one pipeline and return its :class:`EvalReport`.

    With ``out_dir`` set, writes ``report.json`` (deterministic fields),
    ``report.tsv``, ``report.timings.json``, ``hits.tsv`` and, when a
    reducer is configured, ``model.npz`` (plus ``trace.tsv`` for
    autoencoders).
    """
    config = _as_config(config, seed)
    bundle = load_data(config)
    _check_dims(config, bundle)
    report, pipeline = _evaluate(config, bundle)
    if out_dir is not None:
        out = Path(out_dir)
        write_report(report, out)
        write_hits(pipeline, bundle, config, out / "hits.tsv")
        if pipeline.model_ is not None:
            save_model(pipeline.model_, out / "model.npz")
            if hasattr(pipeline.model_, "write_trace"):
                pipeline.model_.write_trace(out / "trace.tsv")
    return report


def sweep(config, dims=None, out_dir=None, seed=None, include_baseline=False):
    """One report per target dimension (in the given order)."""
    config = _as_config(config, seed)
    dims = tuple(dims) if dims is not None else config.sweep_dims
    if not dims:
        raise ConfigError("sweep needs at least one dimension", field="sweep.dims")
    if config.reducer.kind == "none":
        raise ConfigError("sweep needs a reducer", field="reducer.kind")
    if any(not isinstance(d, (int, np.integer)) or d < 1 for d in dims):
        raise ConfigError("sweep dims must be positive integers", field="sweep.dims")
    bundle = load_data(config)
    reports = []
    if include_baseline:
        base = replace(config, reducer=ReducerSpec(), name=f"{config.name}:baseline")
        reports.append(_evaluate(base, bundle)[0])
    for d in dims:
        cfg = replace(config.with_reducer_dim(int(d)), name=f"{config.name}:d{d}")
        _check_dims(cfg, bundle)
        reports.append(_evaluate(cfg, bundle)[0])
    if out_dir is not None:
        _write_table(reports, out_dir, "sweep")
    return reports


def _write_table(reports, out_dir, stem):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.tsv").write_text(reports_tsv(reports), encoding="utf-8")
    (out / f"{stem}.json").write_text(
        json.dumps([r.deterministic_dict() for r in reports], indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    (out / f"{stem}.timings.json").write_text(
        json.dumps([r.timings for r in reports], indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _distractor_pool(config, bundle, n):
    if config.distractor_pool:
        pool = read_embeddings(config.resolve(config.distractor_pool))
        if pool.n_items < n:
            raise ConfigError(f"distractor pool holds {pool.n_items} rows, {n} requested",
                              field="ablation.extra_docs")
        return pool.take(np.arange(n))
    if config.source != "synthetic":
        raise ConfigError("distractor ablation on file data needs [ablation] pool",
                          field="ablation.pool")
    return generate_distractors(config.synthetic, n, config.ablation_seed)


def with_extra_documents(bundle, extra):
    if extra.n_items == 0:
        return bundle
    clash = set(extra.ids) & set(bundle.documents.ids)
    if clash:
        raise ValueError(f"extra documents reuse ids, e.g. {min(clash)!r}")
    docs = EmbeddingMatrix(bundle.documents.ids + extra.ids,
                           np.vstack([bundle.documents.vectors, extra.vectors]),
                           bundle.documents.kind)
    return DatasetBundle(docs, bundle.queries, bundle.judgments)


def distractor_ablation(config, extra_doc_counts=None, seed=None, out_dir=None):
    """Re-evaluate with growing numbers of irrelevant documents.

    The reducer is fitted once on the original bundle; extra documents only
    join the searched collection. Pools are nested: a larger count extends
    the smaller one.
    """
    config = _as_config(config, seed)
    counts = tuple(extra_doc_counts) if extra_doc_counts is not None else config.extra_docs
    if not counts:
        raise ConfigError("ablation needs at least one count", field="ablation.extra_docs")
    if any(isinstance(c, bool) or int(c) != c or c < 0 for c in counts):
        raise ConfigError("extra document counts must be non-negative integers",
                          field="ablation.extra_docs")
    bundle = load_data(config)
    _check_dims(config, bundle)
    pool = _distractor_pool(config, bundle, max(counts))
    pipeline = config.pipeline().fit(bundle, retrieval_for(config, bundle.documents.n_items))
    reports = []
    for c in counts:
        enlarged = with_extra_documents(bundle, pool.take(np.arange(int(c))))
        cfg = replace(config, name=f"{config.name}:+{c}")
        report, _ = _evaluate(cfg, bundle, eval_bundle=enlarged, pipeline=pipeline)
        report.extra["extra_docs"] = int(c)
        reports.append(report)
    if out_dir is not None:
        _write_table(reports, out_dir, "ablation")
    return reports


# ---------------------------------------------------------------------------
# Reconstruction-loss pitfall
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PitfallReport:
    scale: float
    reconstruction_mse: float
    top1_overlap: float
    n_queries: int
    n_documents: int

    def as_dict(self):
        return {"scale": self.scale, "reconstruction_mse": self.reconstruction_mse,
                "top1_overlap": self.top1_overlap, "n_queries": self.n_queries,
                "n_documents": self.n_documents}

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def pitfall_bundle(seed=0, n_clusters=20, docs_per_cluster=10, queries_per_cluster=5, dim=16):
    """Clustered toy bundle whose coordinate 0 is pure, uninformative noise
    of the same magnitude as the other coordinates."""
    base = generate_synthetic(n_clusters=n_clusters, intrinsic_dim=dim - 1, ambient_dim=dim - 1,
                              docs_per_cluster=docs_per_cluster,
                              queries_per_cluster=queries_per_cluster, noise_sigma=0.3, seed=seed)
    rng = np.random.default_rng((seed, 99))
    scale = float(np.std(base.documents.vectors))

    def with_noise(m):
        col = scale * rng.standard_normal((m.n_items, 1))
        return m.with_vectors(np.hstack([col, m.vectors]))

    return base.replace(documents=with_noise(base.documents), queries=with_noise(base.queries))


def pitfall_demo(scale=1e6, seed=0, metric=INNER_PRODUCT):
    """Apply the invertible map ``diag(scale, 1, ..., 1)`` to both sides.

    Reports the mean squared error of undoing the map with its explicit
    inverse and the fraction of queries whose top-1 document is unchanged.
    """
    bundle = pitfall_bundle(seed)
    d = bundle.dim
    R = np.ones(d)
    R[0] = scale
    R_inv = 1.0 / R
    D = bundle.documents.vectors
    mapped_docs = D * R
    recon = np.mean((mapped_docs * R_inv - D) ** 2)
    config = RetrievalConfig(metric=metric)
    before = search(build_index(bundle.documents, config), bundle.queries, 1, config)
    after_docs = bundle.documents.with_vectors(mapped_docs)
    after_queries = bundle.queries.with_vectors(bundle.queries.vectors * R)
    after = search(build_index(after_docs, config), after_queries, 1, config)
    same = np.mean([a[0] == b[0] for a, b in zip(before.indices, after.indices)])
    return PitfallReport(float(scale), float(recon), float(same), len(before), bundle.documents.n_items)


__all__ = [
    "ExperimentConfig",
    "PitfallReport",
    "distractor_ablation",
    "load_config",
    "load_data",
    "parse_config",
    "pitfall_bundle",
    "pitfall_demo",
    "retrieval_for",
    "run_experiment",
    "sweep",
    "with_extra_documents",
    "write_report",
]
