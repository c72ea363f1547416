import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vecshrink.store import (
    DatasetBundle,
    EmbeddingMatrix,
    RelevanceJudgments,
    generate_synthetic,
)

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_bundle(docs, queries, qrels, doc_ids=None, query_ids=None):
    docs = np.asarray(docs)
    queries = np.asarray(queries)
    doc_ids = doc_ids or tuple(f"d{i}" for i in range(len(docs)))
    query_ids = query_ids or tuple(f"q{i}" for i in range(len(queries)))
    return DatasetBundle(EmbeddingMatrix(doc_ids, docs, "document"),
                         EmbeddingMatrix(query_ids, queries, "query"),
                         RelevanceJudgments(qrels))


@pytest.fixture
def small_bundle():
    return generate_synthetic(n_clusters=12, intrinsic_dim=8, ambient_dim=48,
                              docs_per_cluster=10, queries_per_cluster=3, noise_sigma=0.5, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        name = report.nodeid.split("::")[-1].removeprefix("test_")
        _ACCEPTANCE.append((name, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{verdict}  {name}  {detail}".rstrip())
