import json
import subprocess
import sys

import numpy as np
import pytest

from vecshrink.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from vecshrink.quantize import read_quantized
from vecshrink.serialization import load_model
from vecshrink.store import load_bundle_dir

CONFIG = """
[experiment]
name = cli
seed = 1
[synthetic]
n_clusters = 10
intrinsic_dim = 6
ambient_dim = 24
docs_per_cluster = 8
queries_per_cluster = 2
[preprocess]
pre = center, normalize
post = center, normalize
[reducer]
kind = pca
dim = 8
[quantizer]
scheme = bit1
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(CONFIG)
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


class TestVerbs:
    def test_synth(self, tmp_path, capsys):
        assert run("synth", "--n-clusters", 4, "--intrinsic-dim", 3, "--ambient-dim", 9,
                   "--seed", 5, "--out-dir", tmp_path / "s") == EXIT_OK
        b = load_bundle_dir(tmp_path / "s")
        assert b.dim == 9 and b.documents.n_items == 80
        assert json.loads((tmp_path / "s" / "synthetic.json").read_text())["seed"] == 5
        assert "wrote" in capsys.readouterr().out

    def test_ingest_npy(self, tmp_path):
        np.save(tmp_path / "d.npy", np.eye(3))
        np.save(tmp_path / "q.npy", np.eye(3)[:2])
        (tmp_path / "qrels.tsv").write_text("q0\td0\nq1\td1\n")
        assert run("ingest", "--documents", tmp_path / "d.npy", "--queries", tmp_path / "q.npy",
                   "--qrels", tmp_path / "qrels.tsv", "--out-dir", tmp_path / "b") == EXIT_OK
        b = load_bundle_dir(tmp_path / "b")
        np.testing.assert_array_equal(b.documents.vectors, np.eye(3))
        assert b.judgments["q1"] == {"d1"}

    def test_ingest_tsv(self, tmp_path):
        (tmp_path / "d.tsv").write_text("a\t1 0\nb\t0 1\n")
        (tmp_path / "q.tsv").write_text("x\t1 0.1\n")
        (tmp_path / "qrels.tsv").write_text("x\ta\n")
        assert run("ingest", "--documents", tmp_path / "d.tsv", "--queries", tmp_path / "q.tsv",
                   "--qrels", tmp_path / "qrels.tsv", "--out-dir", tmp_path / "b") == EXIT_OK
        assert load_bundle_dir(tmp_path / "b").documents.ids == ("a", "b")

    def test_ingest_unknown_id(self, tmp_path, capsys):
        np.save(tmp_path / "d.npy", np.eye(2))
        np.save(tmp_path / "q.npy", np.eye(2))
        (tmp_path / "qrels.tsv").write_text("q0\td7\n")
        assert run("ingest", "--documents", tmp_path / "d.npy", "--queries", tmp_path / "q.npy",
                   "--qrels", tmp_path / "qrels.tsv", "--out-dir", tmp_path / "b") == EXIT_INVALID
        assert "d7" in capsys.readouterr().err

    def test_fit_and_compress_with_model(self, tmp_path, config):
        assert run("fit", "--config", config, "--out-dir", tmp_path / "m") == EXIT_OK
        model = load_model(tmp_path / "m" / "model.npz")
        assert model.components_.shape == (8, 24)
        assert run("compress", "--config", config, "--model", tmp_path / "m" / "model.npz",
                   "--out-dir", tmp_path / "c1") == EXIT_OK
        assert run("compress", "--config", config, "--out-dir", tmp_path / "c2") == EXIT_OK
        a, b = load_bundle_dir(tmp_path / "c1"), load_bundle_dir(tmp_path / "c2")
        assert a.equals(b) and a.dim == 8
        q = read_quantized(tmp_path / "c1" / "documents.quant")
        assert q.scheme == "bit1" and q.payload.shape == (80, 1)
        assert json.loads((tmp_path / "c1" / "size.json").read_text())["rounded_ratio"] == 96

    def test_model_dim_mismatch(self, tmp_path, config):
        from vecshrink.pca import PCAReducer
        from vecshrink.serialization import save_model
        save_model(PCAReducer(2).fit(np.random.default_rng(0).normal(size=(10, 5))),
                   tmp_path / "bad.npz")
        assert run("compress", "--config", config, "--model", tmp_path / "bad.npz",
                   "--out-dir", tmp_path / "c") == EXIT_INVALID

    def test_index(self, tmp_path, capsys):
        run("synth", "--n-clusters", 20, "--intrinsic-dim", 4, "--ambient-dim", 8,
            "--out-dir", tmp_path / "s")
        capsys.readouterr()
        assert run("index", "--data", tmp_path / "s", "--search", "ivf",
                   "--out-dir", tmp_path / "i") == EXIT_OK
        assert "nlist=10 nprobe=5" in capsys.readouterr().out
        with np.load(tmp_path / "i" / "index.npz") as arch:
            assert arch["centroids"].shape == (10, 8)

    def test_eval(self, tmp_path, config, capsys):
        assert run("eval", "--config", config, "--out-dir", tmp_path / "e") == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("label\t") and out[1].startswith("cli\tpca\t8\tbit1")
        assert (tmp_path / "e" / "report.json").exists()

    def test_eval_seed_override(self, tmp_path, config):
        run("eval", "--config", config, "--seed", 7, "--out-dir", tmp_path / "e")
        data = json.loads((tmp_path / "e" / "report.json").read_text())
        assert data["extra"]["experiment"]["seed"] == 7

    def test_sweep(self, tmp_path, config, capsys):
        assert run("sweep", "--config", config, "--dims", "4,8", "--baseline",
                   "--out-dir", tmp_path / "w") == EXIT_OK
        assert len(capsys.readouterr().out.splitlines()) == 4
        assert len(json.loads((tmp_path / "w" / "sweep.json").read_text())) == 3

    def test_ablate(self, tmp_path, config, capsys):
        assert run("ablate", "--config", config, "--extra-docs", "0,50",
                   "--out-dir", tmp_path / "a") == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "extra_docs\trp_inner_product\trp_l2"
        assert [ln.split("\t")[0] for ln in lines[1:]] == ["0", "50"]

    def test_pitfall(self, tmp_path, capsys):
        assert run("pitfall", "--out-dir", tmp_path / "p") == EXIT_OK
        data = json.loads(capsys.readouterr().out)
        assert data["reconstruction_mse"] < 1e-8 and data["top1_overlap"] < 0.5

    def test_report_tables(self, tmp_path, config, capsys):
        run("eval", "--config", config, "--out-dir", tmp_path / "e")
        run("sweep", "--config", config, "--dims", "4", "--out-dir", tmp_path / "w")
        capsys.readouterr()
        assert run("report", tmp_path / "e" / "report.json", tmp_path / "w" / "sweep.json") == EXIT_OK
        assert len(capsys.readouterr().out.splitlines()) == 3

    def test_report_hits(self, tmp_path, capsys):
        (tmp_path / "a.tsv").write_text("query_id\thits\trelevant\nq0\t0\t2\nq1\t1\t2\nq2\t2\t2\n")
        (tmp_path / "b.tsv").write_text("query_id\thits\trelevant\nq0\t0\t2\nq1\t2\t2\nq2\t1\t2\n")
        assert run("report", "--hits", tmp_path / "a.tsv", tmp_path / "b.tsv") == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "pearson\t0.5"
        assert out[2:] == ["0\t1\t0\t0", "1\t0\t0\t1", "2\t0\t1\t0"]


class TestExitCodes:
    def test_missing_config(self, tmp_path):
        assert run("eval", "--out-dir", tmp_path) == EXIT_INVALID

    def test_bad_config_reports_line(self, tmp_path, capsys):
        path = tmp_path / "bad.ini"
        path.write_text("[reducer]\nkind = pca\ndim = zero\n")
        assert run("eval", "--config", path) == EXIT_INVALID
        assert "[reducer.dim, line 3]" in capsys.readouterr().err

    def test_missing_out_dir(self, config):
        assert run("fit", "--config", config) == EXIT_INVALID

    def test_unknown_verb(self):
        with pytest.raises(SystemExit) as exc:
            run("shrink")
        assert exc.value.code == 2

    def test_divergence_is_runtime(self, tmp_path, capsys):
        path = tmp_path / "div.ini"
        path.write_text("[synthetic]\nn_clusters = 10\nintrinsic_dim = 4\nambient_dim = 8\n"
                        "mean_offset = 1e200\n[reducer]\nkind = autoencoder\ndim = 2\n"
                        "batch_size = 16\nepochs = 2\n")
        with np.errstate(all="ignore"):
            assert run("fit", "--config", path, "--out-dir", tmp_path / "o") == EXIT_RUNTIME
        assert "epoch" in capsys.readouterr().err

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "vecshrink.cli", "pitfall", "--scale", "1"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["top1_overlap"] == 1.0
