"""Command-line entry point: ``vecshrink <verb> [options]``.

Exit codes: 0 success, 2 invalid input (config, arguments, file formats),
3 runtime failure (e.g. training divergence, I/O errors).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DivergenceError, VecShrinkError
from .experiment import (
    distractor_ablation,
    load_config,
    load_data,
    pitfall_demo,
    retrieval_for,
    run_experiment,
    sweep,
)
from .pipeline import reports_tsv
from .quantize import write_quantized
from .retrieval import (
    FLAT,
    IVF,
    HitDistribution,
    IVFParams,
    RetrievalConfig,
    build_index,
    cross_tab,
    hit_correlation,
)
from .serialization import load_model, save_model
from .store import (
    DOCUMENT,
    QUERY,
    DatasetBundle,
    EmbeddingMatrix,
    SyntheticSpec,
    generate_synthetic,
    load_bundle_dir,
    read_embeddings,
    read_qrels,
    save_bundle,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3


def _int_list(text):
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_config(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    return load_config(args.config, seed=args.seed)


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def _read_vectors(path, kind, ids_path=None):
    path = Path(path)
    if path.suffix == ".npy":
        vectors = np.load(path, allow_pickle=False)
        if ids_path:
            ids = Path(ids_path).read_text(encoding="utf-8").splitlines()
        else:
            prefix = "d" if kind == DOCUMENT else "q"
            ids = [f"{prefix}{i}" for i in range(len(vectors))]
        return EmbeddingMatrix(tuple(ids), vectors, kind)
    if path.suffix in (".tsv", ".txt"):
        ids, rows = [], []
        for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            head, _, rest = line.partition("\t")
            try:
                rows.append([float(v) for v in rest.split()])
            except ValueError:
                raise ConfigError(f"{path}: non-numeric value", line=number) from None
            ids.append(head)
        if len({len(r) for r in rows}) > 1:
            raise ConfigError(f"{path}: rows have different lengths")
        return EmbeddingMatrix(tuple(ids), np.asarray(rows, dtype=np.float64), kind)
    return read_embeddings(path, kind)


def cmd_ingest(args):
    docs = _read_vectors(args.documents, DOCUMENT, args.doc_ids)
    queries = _read_vectors(args.queries, QUERY, args.query_ids)
    bundle = DatasetBundle(docs, queries, read_qrels(args.qrels))
    save_bundle(bundle, _out_dir(args))
    print(f"ingested {docs.n_items} documents, {queries.n_items} queries, dim {docs.dim}")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args):
    spec = load_config(args.config, seed=args.seed).synthetic if args.config else SyntheticSpec()
    overrides = {k: v for k, v in (("n_clusters", args.n_clusters),
                                   ("intrinsic_dim", args.intrinsic_dim),
                                   ("ambient_dim", args.ambient_dim)) if v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    spec = replace(spec, **overrides)
    bundle = generate_synthetic(spec)
    out = _out_dir(args)
    save_bundle(bundle, out)
    (out / "synthetic.json").write_text(json.dumps(spec.as_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {bundle.documents.n_items} documents and {bundle.queries.n_items} queries to {out}")


# ---------------------------------------------------------------------------
# fit / compress
# ---------------------------------------------------------------------------

def _fitted_pipeline(config, bundle, model_path=None):
    pipeline = config.pipeline()
    if not model_path:
        return pipeline.fit(bundle, retrieval_for(config, bundle.documents.n_items))
    model = load_model(model_path)
    if model.n_features_in_ != bundle.dim:
        raise ConfigError(f"model expects dimension {model.n_features_in_}, "
                          f"data has {bundle.dim}", field="--model")
    pipeline.reducer = replace(config.reducer, kind=config.reducer.kind,
                               dim=model.transform(np.zeros((1, bundle.dim))).shape[1])
    pipeline.model_ = model
    pipeline.in_dim_ = bundle.dim
    return pipeline


def cmd_fit(args):
    config = _require_config(args)
    if config.reducer.kind == "none":
        raise ConfigError("nothing to fit: [reducer] kind is none", field="reducer.kind")
    bundle = load_data(config)
    pipeline = _fitted_pipeline(config, bundle)
    out = _out_dir(args)
    save_model(pipeline.model_, out / "model.npz")
    if hasattr(pipeline.model_, "write_trace"):
        pipeline.model_.write_trace(out / "trace.tsv")
    print(f"saved {config.reducer.kind} model to {out / 'model.npz'}")


def cmd_compress(args):
    config = _require_config(args)
    bundle = load_data(config)
    pipeline = _fitted_pipeline(config, bundle, args.model)
    compressed = pipeline.transform(bundle)
    out = _out_dir(args)
    save_bundle(compressed, out)
    if config.quantizer.scheme != "none":
        write_quantized(pipeline.quantized_documents(bundle), out / "documents.quant")
    report = pipeline.size_report(bundle.documents.n_items)
    (out / "size.json").write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    print(f"compressed to dim {pipeline.out_dim} ({report.label()})")


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------

def cmd_index(args):
    bundle = load_bundle_dir(args.data)
    params = IVFParams(args.nlist, args.nprobe, seed=args.seed or 0)
    if args.search == IVF and not args.no_scale:
        params = params.scaled_for(bundle.documents.n_items)
    index = build_index(bundle.documents, RetrievalConfig(args.metric, args.search, params))
    out = _out_dir(args)
    arrays = {"kind": np.frombuffer(index.kind.encode(), np.uint8)}
    if args.search == IVF:
        arrays["centroids"] = index.centroids
        arrays["assignment"] = index.assignment
        sizes = [len(lst) for lst in index.lists]
        print(f"ivf index: nlist={params.nlist} nprobe={params.nprobe} "
              f"list sizes min={min(sizes)} max={max(sizes)}")
    else:
        print(f"flat index over {len(index)} documents, dim {index.dim}")
    with open(out / "index.npz", "wb") as fh:
        np.savez(fh, **arrays)


# ---------------------------------------------------------------------------
# eval / sweep / ablate / pitfall / report
# ---------------------------------------------------------------------------

def cmd_eval(args):
    config = _require_config(args)
    report = run_experiment(config, args.out_dir)
    print(reports_tsv([report]), end="")


def cmd_sweep(args):
    config = _require_config(args)
    reports = sweep(config, args.dims, args.out_dir, include_baseline=args.baseline)
    print(reports_tsv(reports), end="")


def cmd_ablate(args):
    config = _require_config(args)
    reports = distractor_ablation(config, args.extra_docs, out_dir=args.out_dir)
    print("extra_docs\t" + "\t".join(f"rp_{m}" for m in config.metrics))
    for r in reports:
        print(f"{r.extra['extra_docs']}\t" + "\t".join(f"{r.r_precision[m]:.6f}" for m in config.metrics))


def cmd_pitfall(args):
    report = pitfall_demo(args.scale, args.seed or 0)
    text = report.to_json()
    if args.out_dir:
        (_out_dir(args) / "pitfall.json").write_text(text + "\n")
    print(text)


def _read_hits(path):
    ids, hits, rel = [], [], []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if number == 1 and line.startswith("query_id"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(f"{path}: expected 3 columns", line=number)
        ids.append(parts[0])
        hits.append(int(parts[1]))
        rel.append(int(parts[2]))
    return HitDistribution(tuple(ids), np.asarray(hits), np.asarray(rel))


def cmd_report(args):
    if args.hits:
        a, b = (_read_hits(p) for p in args.hits)
        print(f"pearson\t{hit_correlation(a, b):.12g}")
        table = cross_tab(a, b)
        print("hits_a\\hits_b\t" + "\t".join(str(j) for j in range(table.shape[1])))
        for i, row in enumerate(table):
            print(f"{i}\t" + "\t".join(str(int(v)) for v in row))
        return
    if not args.reports:
        raise ConfigError("report needs report JSON files or --hits A B")
    rows = []
    for path in args.reports:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rows.extend(data if isinstance(data, list) else [data])
    cols = ("label", "reducer", "dim", "quantizer", "rp_inner_product", "rp_l2", "compression")
    lines = ["\t".join(cols)]
    for r in rows:
        red = r["pipeline"]["reducer"]
        lines.append("\t".join([r.get("label", ""), red["kind"], str(red.get("dim", "")),
                                r["pipeline"]["quantizer"]["scheme"],
                                f"{r['r_precision'].get('inner_product', float('nan')):.6f}",
                                f"{r['r_precision'].get('l2', float('nan')):.6f}",
                                f"{r['compression']['rounded_ratio']}x"]))
    text = "\n".join(lines) + "\n"
    if args.out_dir:
        (_out_dir(args) / "summary.tsv").write_text(text)
    print(text, end="")


# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    common.add_argument("--config", help="experiment config (INI)")
    common.add_argument("--out-dir", default=None, help="output directory")

    parser = argparse.ArgumentParser(prog="vecshrink",
                                     description="Compress dense retrieval indexes and evaluate them.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", parents=[common], help="convert embeddings into a bundle directory")
    p.add_argument("--documents", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--doc-ids")
    p.add_argument("--query-ids")
    p.set_defaults(func=cmd_ingest, needs_out=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic bundle")
    p.add_argument("--n-clusters", type=int)
    p.add_argument("--intrinsic-dim", type=int)
    p.add_argument("--ambient-dim", type=int)
    p.set_defaults(func=cmd_synth, needs_out=True)

    p = sub.add_parser("fit", parents=[common], help="fit the configured reducer")
    p.set_defaults(func=cmd_fit, needs_out=True)

    p = sub.add_parser("compress", parents=[common], help="write the compressed bundle")
    p.add_argument("--model", help="previously fitted model.npz")
    p.set_defaults(func=cmd_compress, needs_out=True)

    p = sub.add_parser("index", parents=[common], help="build a search index over a bundle")
    p.add_argument("--data", required=True, help="bundle directory")
    p.add_argument("--search", choices=(FLAT, IVF), default=FLAT)
    p.add_argument("--metric", default="inner_product")
    p.add_argument("--nlist", type=int, default=200)
    p.add_argument("--nprobe", type=int, default=100)
    p.add_argument("--no-scale", action="store_true", help="keep nlist/nprobe as given")
    p.set_defaults(func=cmd_index, needs_out=True)

    p = sub.add_parser("eval", parents=[common], help="run one configured experiment")
    p.set_defaults(func=cmd_eval, needs_out=False)

    p = sub.add_parser("sweep", parents=[common], help="evaluate several target dimensions")
    p.add_argument("--dims", type=_int_list, default=None)
    p.add_argument("--baseline", action="store_true", help="prepend the uncompressed run")
    p.set_defaults(func=cmd_sweep, needs_out=False)

    p = sub.add_parser("ablate", parents=[common], help="add irrelevant documents and re-evaluate")
    p.add_argument("--extra-docs", type=_int_list, default=None)
    p.set_defaults(func=cmd_ablate, needs_out=False)

    p = sub.add_parser("pitfall", parents=[common], help="invertible map that breaks retrieval")
    p.add_argument("--scale", type=float, default=1e6)
    p.set_defaults(func=cmd_pitfall, needs_out=False)

    p = sub.add_parser("report", parents=[common], help="tabulate reports or compare hit files")
    p.add_argument("reports", nargs="*")
    p.add_argument("--hits", nargs=2, metavar=("A", "B"))
    p.set_defaults(func=cmd_report, needs_out=False)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.needs_out and not args.out_dir:
            raise ConfigError(f"{args.verb} needs --out-dir")
        args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (VecShrinkError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
