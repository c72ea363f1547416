import json
from itertools import pairwise

import numpy as np
import pytest
from conftest import make_bundle

from vecshrink.exceptions import ConfigError
from vecshrink.experiment import (
    distractor_ablation,
    load_config,
    load_data,
    parse_config,
    pitfall_bundle,
    pitfall_demo,
    run_experiment,
    sweep,
    with_extra_documents,
)
from vecshrink.retrieval import IVF, evaluate
from vecshrink.store import EmbeddingMatrix, save_bundle

SMALL = """
[experiment]
name = small
seed = 2

[synthetic]
n_clusters = 12
intrinsic_dim = 8
ambient_dim = 48
docs_per_cluster = 8
queries_per_cluster = 3
noise_sigma = 0.6

[preprocess]
pre = center, normalize
post = center, normalize
"""


def cfg(extra="", seed=None):
    return parse_config(SMALL + extra, seed=seed)


class TestParse:
    def test_defaults(self):
        c = parse_config("")
        assert c.source == "synthetic" and c.reducer.kind == "none"
        assert c.metrics == ("inner_product", "l2")
        assert c.retrieval.ivf.nlist == 200 and c.retrieval.ivf.nprobe == 100

    def test_values(self):
        c = cfg("[reducer]\nkind = pca\ndim = 6\ncomponent_scales = 0.5, 0.8\n"
                "[quantizer]\nscheme = bit1\nalpha = 0\n[retrieval]\nsearch = ivf\nnlist = 8\nnprobe = 2\n")
        assert c.name == "small" and c.seed == 2
        assert c.synthetic.n_clusters == 12 and c.synthetic.seed == 2
        assert c.reducer.dim == 6 and c.reducer.options["component_scales"] == (0.5, 0.8)
        assert c.quantizer.scheme == "bit1" and c.quantizer.alpha == 0.0
        assert c.retrieval.search == IVF and c.retrieval.ivf.nprobe == 2
        assert c.pre.steps == ("center", "normalize")

    def test_seed_override(self):
        c = cfg(seed=9)
        assert c.seed == 9 and c.synthetic.seed == 9

    def test_autoencoder_options(self):
        c = cfg("[reducer]\nkind = autoencoder\ndim = 4\nvariant = deep\nl1 = true\n"
                "early_stop_tol = none\nhidden = 16, 8\n")
        assert c.reducer.options["l1"] == 10 ** -5.9
        assert c.reducer.options["early_stop_tol"] is None
        assert c.reducer.options["hidden"] == (16, 8)

    @pytest.mark.parametrize("text, field, line", [
        ("[reducer]\nkind = pca\ndim = -3\n", "reducer.dim", 3),
        ("[reducer]\nkind = pca\n\ndim = x\n", "reducer.dim", 4),
        ("[reducer]\nkind = umap\n", "reducer.kind", 2),
        ("[quantizer]\nscheme = int4\n", "quantizer.scheme", 2),
        ("[quantizer]\nalpha = 0.3\n", "quantizer.alpha", 2),
        ("[preprocess]\npre = zscore, center\n", "preprocess.pre", 2),
        ("[retrieval]\nnlist = 4\nnprobe = 9\n", "retrieval.nprobe", 3),
        ("[reducer]\nbogus = 1\n", "reducer.bogus", 2),
        ("[nope]\n", "nope", 1),
        ("[synthetic]\nintrinsic_dim = 900\n", "synthetic.intrinsic_dim", 2),
        ("[reducer]\nkind = pca\n", "reducer.dim", None),
    ])
    def test_errors_carry_field_and_line(self, text, field, line):
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.field == field
        assert exc.value.line == line
        if line:
            assert f"line {line}" in str(exc.value)

    def test_malformed(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("no section header\n")
        assert exc.value.line == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.ini")

    def test_files_source_needs_paths(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[data]\nsource = files\n")
        assert exc.value.field == "data.source"


class TestRun:
    def test_noiseless_identity(self):
        c = parse_config("[synthetic]\nn_clusters = 5\nintrinsic_dim = 4\nambient_dim = 8\n"
                         "noise_sigma = 0\n")
        assert run_experiment(c).r_precision["l2"] == 1.0
        c = parse_config("[synthetic]\nn_clusters = 5\nintrinsic_dim = 4\nambient_dim = 8\n"
                         "noise_sigma = 0\n[preprocess]\npre = normalize\n")
        assert run_experiment(c).r_precision["inner_product"] == 1.0

    def test_full_pca_equals_baseline(self):
        base = run_experiment(cfg())
        full = run_experiment(cfg("[reducer]\nkind = pca\ndim = 48\n"))
        assert full.r_precision == base.r_precision

    def test_outputs(self, tmp_path):
        rep = run_experiment(cfg("[reducer]\nkind = pca\ndim = 8\n[quantizer]\nscheme = int8\n"),
                             tmp_path)
        for name in ("report.json", "report.tsv", "report.timings.json", "hits.tsv", "model.npz"):
            assert (tmp_path / name).exists()
        data = json.loads((tmp_path / "report.json").read_text())
        assert data["r_precision"] == rep.r_precision
        assert data["compression"]["rounded_ratio"] == 24
        hits = (tmp_path / "hits.tsv").read_text().splitlines()
        assert hits[0] == "query_id\thits\trelevant" and len(hits) == 37

    def test_autoencoder_trace(self, tmp_path):
        run_experiment(cfg("[reducer]\nkind = autoencoder\ndim = 4\nepochs = 2\nbatch_size = 16\n"),
                       tmp_path)
        assert (tmp_path / "trace.tsv").read_text().startswith("epoch\ttrain_mse\tl1_term")

    def test_deterministic_bytes(self, tmp_path):
        text = "[reducer]\nkind = gaussian\ndim = 8\n[retrieval]\nsearch = ivf\n"
        run_experiment(cfg(text), tmp_path / "a")
        run_experiment(cfg(text), tmp_path / "b")
        for name in ("report.json", "report.tsv", "hits.tsv", "model.npz"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_result(self):
        text = "[reducer]\nkind = gaussian\ndim = 4\n"
        a = run_experiment(cfg(text), seed=1)
        b = run_experiment(cfg(text), seed=2)
        assert a.to_json(False) != b.to_json(False)

    def test_file_source(self, tmp_path, small_bundle):
        save_bundle(small_bundle, tmp_path / "data")
        c = parse_config("[data]\nsource = files\ndir = data\n", base_dir=tmp_path)
        assert load_data(c).equals(small_bundle)
        rep = run_experiment(c)
        rp, _ = evaluate(small_bundle.queries, small_bundle.documents, small_bundle.judgments)
        assert rep.r_precision["inner_product"] == rp

    def test_dim_too_large(self):
        with pytest.raises(ConfigError):
            run_experiment(cfg("[reducer]\nkind = pca\ndim = 64\n"))


class TestSweep:
    def test_rows_and_monotone(self, tmp_path):
        reports = sweep(cfg("[reducer]\nkind = pca\ndim = 4\n"), [4, 8, 16, 48], tmp_path,
                        include_baseline=True)
        assert len(reports) == 5
        rps = [r.r_precision["inner_product"] for r in reports[1:]]
        assert all(b >= a - 0.02 for a, b in pairwise(rps))
        assert reports[-1].r_precision == reports[0].r_precision
        lines = (tmp_path / "sweep.tsv").read_text().splitlines()
        assert len(lines) == 6 and lines[2].split("\t")[0] == "small:d4"

    def test_empty(self):
        with pytest.raises(ConfigError):
            sweep(cfg("[reducer]\nkind = pca\ndim = 4\n"), [])

    def test_needs_reducer(self):
        with pytest.raises(ConfigError):
            sweep(cfg(), [4])

    def test_dims_from_config(self):
        reports = sweep(cfg("[reducer]\nkind = drop\ndim = 4\n[sweep]\ndims = 4, 6\n"))
        assert [r.pipeline["reducer"]["dim"] for r in reports] == [4, 6]


class TestAblation:
    def test_zero_equals_base(self):
        c = cfg("[reducer]\nkind = pca\ndim = 8\n")
        base = run_experiment(c)
        zero = distractor_ablation(c, [0])[0]
        assert zero.r_precision == base.r_precision
        assert zero.n_documents == base.n_documents

    def test_fit_data_unchanged(self):
        c = cfg("[reducer]\nkind = pca\ndim = 8\n")
        reports = distractor_ablation(c, [0, 200])
        assert reports[0].reconstruction_loss == reports[1].reconstruction_loss
        assert reports[1].n_documents == reports[0].n_documents + 200

    def test_invalid_counts(self):
        with pytest.raises(ConfigError):
            distractor_ablation(cfg(), [-1])
        with pytest.raises(ConfigError):
            distractor_ablation(cfg(), [])

    def test_duplicates_never_help(self):
        docs = np.array([[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [0.6, 0.8]])
        queries = np.array([[1.0, 0.1], [0.1, 1.0]])
        b = make_bundle(docs, queries, {"q0": {"d0", "d1"}, "q1": {"d2", "d3"}})
        base = evaluate(b.queries, b.documents, b.judgments)[0]
        for i in range(4):
            for prefix in ("a", "z"):
                extra = EmbeddingMatrix((f"{prefix}{i}",), docs[i:i + 1])
                enlarged = with_extra_documents(b, extra)
                assert evaluate(enlarged.queries, enlarged.documents, b.judgments)[0] <= base

    def test_id_clash(self, small_bundle):
        with pytest.raises(ValueError):
            with_extra_documents(small_bundle, small_bundle.documents.take([0]))

    @pytest.mark.slow
    def test_trend(self):
        means = []
        for count in (0, 100, 400):
            scores = []
            for seed in range(5):
                rep = distractor_ablation(cfg("[reducer]\nkind = pca\ndim = 8\n"), [count], seed=seed)
                scores.append(rep[0].r_precision["inner_product"])
            means.append(np.mean(scores))
        assert means[1] <= means[0] + 0.01 and means[2] <= means[1] + 0.01


class TestPitfall:
    def test_claims(self):
        rep = pitfall_demo()
        assert rep.reconstruction_mse < 1e-8
        assert rep.top1_overlap < 0.5

    def test_identity_scale(self):
        assert pitfall_demo(scale=1.0).top1_overlap == 1.0

    def test_dim_zero_uninformative(self):
        b = pitfall_bundle()
        rp_full = evaluate(b.queries, b.documents, b.judgments)[0]
        rp_trim = evaluate(b.queries.with_vectors(b.queries.vectors[:, 1:]),
                           b.documents.with_vectors(b.documents.vectors[:, 1:]), b.judgments)[0]
        assert rp_trim >= rp_full
        assert b.documents.vectors[:, 0].std() == pytest.approx(b.documents.vectors[:, 1:].std(), rel=0.2)

    def test_brute_force_overlap(self):
        b = pitfall_bundle()
        R = np.ones(b.dim)
        R[0] = 1e6
        D, Q = b.documents.vectors, b.queries.vectors
        before = [int(np.argmax(D @ q)) for q in Q]
        after = [int(np.argmax((D * R) @ (q * R))) for q in Q]
        assert pitfall_demo().top1_overlap == pytest.approx(np.mean(np.equal(before, after)))
