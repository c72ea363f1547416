import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vecshrink.exceptions import (
    DimensionMismatchError,
    EmptyCollectionError,
    FormatError,
    QuantizationOverflowError,
)
from vecshrink.preprocess import PreprocessSpec, apply_spec
from vecshrink.quantize import (
    PrecisionReducer,
    QuantizedIndex,
    Stage,
    binary_search,
    dequantize,
    dequantize_array,
    hamming_distance,
    hamming_ip,
    quantize,
    read_quantized,
    row_nbytes,
    size_report,
    to_bit1,
    to_fp16,
    to_int8,
    write_quantized,
)
from vecshrink.retrieval import build_index, evaluate, search
from vecshrink.store import EmbeddingMatrix, generate_synthetic

finite = st.floats(-100, 100, allow_nan=False, width=32).map(float)
matrices = st.integers(1, 40).flatmap(
    lambda d: arrays(np.float64, st.tuples(st.integers(1, 6), st.just(d)), elements=finite))


def pm_half(X):
    return np.where(np.asarray(X) >= 0, 0.5, -0.5)


class TestFP16:
    def test_one_exact(self):
        assert dequantize_array(to_fp16(np.array([[1.0]])))[0, 0] == 1.0

    def test_third(self):
        v = dequantize_array(to_fp16(np.array([[1 / 3]])))[0, 0]
        assert v == float(np.float16(1 / 3))
        assert abs(v - 1 / 3) <= 2 ** -11 * (1 / 3)

    def test_round_to_even(self):
        # 1 + 2**-11 lies halfway between 1 and the next half-precision value.
        assert dequantize_array(to_fp16(np.array([[1 + 2 ** -11]])))[0, 0] == 1.0
        assert dequantize_array(to_fp16(np.array([[1 + 3 * 2 ** -11]])))[0, 0] == 1 + 2 ** -9

    @given(arrays(np.float16, (3, 5), elements=st.floats(-65504, 65504, width=16)))
    def test_representable_round_trip(self, H):
        X = H.astype(np.float64)
        np.testing.assert_array_equal(dequantize_array(to_fp16(X)), X)

    def test_overflow_names_row(self):
        with pytest.raises(QuantizationOverflowError) as exc:
            to_fp16(np.array([[1.0, 2.0], [3.0, 1e6]]))
        assert exc.value.row == 1


class TestInt8:
    def test_endpoints(self):
        q = to_int8(np.array([[0.0], [1.0], [0.0]]))
        np.testing.assert_array_equal(q.payload[:, 0], [0, 255, 0])
        np.testing.assert_array_equal(dequantize_array(q)[:, 0], [0.0, 1.0, 0.0])

    def test_constant(self):
        q = to_int8(np.array([[0.7, 1.0], [0.7, 2.0]]))
        np.testing.assert_array_equal(dequantize_array(q)[:, 0], [0.7, 0.7])
        assert q.scale[0] == 0.0

    def test_uniform_error_bound(self, rng):
        X = rng.uniform(0, 1, size=(5000, 8))
        err = np.abs(dequantize_array(to_int8(X)) - X).max()
        assert err <= (1 / 255) / 2 + 1e-7

    @given(matrices)
    def test_error_bound(self, X):
        q = to_int8(X)
        err = np.abs(dequantize_array(q) - X)
        assert np.all(err <= q.scale / 2 * (1 + 1e-9) + 1e-12)

    def test_empty(self):
        with pytest.raises(EmptyCollectionError):
            to_int8(np.zeros((0, 3)))

    def test_reuse_params_clamps(self):
        q = to_int8(np.array([[0.0], [1.0]]))
        out = to_int8(np.array([[-1.0], [2.0]]), (q.offset, q.scale))
        np.testing.assert_array_equal(dequantize_array(out)[:, 0], [0.0, 1.0])


class TestBit1:
    def test_example(self):
        q = to_bit1(np.array([[0.3, -0.2, 0.0, -0.7]]), alpha=0.5)
        assert q.payload[0, 0] == 0b0101
        np.testing.assert_array_equal(dequantize_array(q), [[0.5, -0.5, 0.5, -0.5]])

    def test_alpha_zero(self):
        q = to_bit1(np.array([[0.3, -0.2, 0.0, -0.7]]), alpha=0.0)
        np.testing.assert_array_equal(dequantize_array(q), [[1.0, 0.0, 1.0, 0.0]])

    def test_all_negative(self):
        q = to_bit1(-np.ones((2, 11)))
        np.testing.assert_array_equal(q.payload, 0)

    def test_lsb_is_dim_zero(self):
        x = -np.ones((1, 16))
        x[0, 9] = 1.0
        np.testing.assert_array_equal(to_bit1(x).payload, [[0, 0b10]])

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            to_bit1(np.ones((1, 2)), alpha=0.25)

    def test_nonzero_padding_rejected(self):
        with pytest.raises(FormatError):
            QuantizedIndex("bit1", 3, np.array([[0b1000]], dtype=np.uint8), ("a",), alpha=0.5)

    @given(matrices)
    def test_fixed_point(self, X):
        q = to_bit1(X, 0.5)
        again = to_bit1(dequantize_array(q), 0.5)
        assert again.payload.tobytes() == q.payload.tobytes()

    def test_alpha_zero_not_fixed_point(self):
        # Cleared bits decode to exactly 0, which the >= rule maps back to 1.
        q = to_bit1(np.array([[-1.0, 1.0]]), 0.0)
        assert to_bit1(dequantize_array(q), 0.0).payload[0, 0] == 0b11


class TestPayload:
    @given(st.integers(1, 100), st.integers(0, 5), st.sampled_from(["fp16", "int8", "bit1"]))
    def test_size_formula(self, dim, n, scheme):
        X = np.random.default_rng(dim).normal(size=(n, dim))
        if scheme == "int8" and n == 0:
            return
        q = quantize(X, scheme)
        bits = {"fp16": 16, "int8": 8, "bit1": 1}[scheme]
        assert q.payload_nbytes == n * ((dim * bits + 7) // 8) == n * row_nbytes(scheme, dim)

    def test_bad_payload_length(self):
        with pytest.raises(FormatError):
            QuantizedIndex("fp16", 3, np.zeros((1, 5), np.uint8), ("a",))

    def test_immutable(self):
        q = to_bit1(np.ones((2, 3)))
        with pytest.raises(ValueError):
            q.payload[0, 0] = 1

    def test_dequantize_keeps_ids(self):
        M = EmbeddingMatrix(("x", "y"), np.array([[1.0, -1.0], [0.5, 0.25]]), "query")
        out = dequantize(to_fp16(M))
        assert out.ids == ("x", "y") and out.kind == "query"


class TestHamming:
    def test_identical(self):
        q = to_bit1(np.array([[1.0, -1, 1, -1, 1, 1, -1, -1]]))
        assert hamming_ip(q, q.payload[0])[0] == 2.0

    def test_complementary(self):
        x = np.array([[1.0, -1, 1, -1, 1, 1, -1, -1]])
        assert hamming_ip(to_bit1(x), to_bit1(-x).payload[0])[0] == -2.0

    def test_distance_brute(self, rng):
        A = rng.integers(0, 256, size=(5, 3), dtype=np.uint8)
        B = rng.integers(0, 256, size=(4, 3), dtype=np.uint8)
        want = [[sum(int(a ^ b).bit_count() for a, b in zip(ra, rb)) for rb in B] for ra in A]
        np.testing.assert_array_equal(hamming_distance(A, B), want)

    @pytest.mark.parametrize("dim", [1, 7, 8, 13, 64, 100, 1024])
    def test_matches_float_ip(self, dim, rng):
        D = rng.normal(size=(50, dim))
        Q = rng.normal(size=(20, dim))
        ip = hamming_ip(to_bit1(D), to_bit1(Q).payload)
        np.testing.assert_allclose(ip, pm_half(Q) @ pm_half(D).T, rtol=0, atol=1e-9)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            hamming_ip(to_bit1(np.ones((2, 16))), to_bit1(np.ones((1, 8))))

    def test_needs_half_alpha(self):
        with pytest.raises(ValueError):
            hamming_ip(to_bit1(np.ones((2, 8)), alpha=0.0), np.zeros(1, np.uint8))

    def test_binary_search_matches_float(self, rng):
        D, Q = rng.normal(size=(40, 20)), rng.normal(size=(6, 20))
        dq, qq = to_bit1(D), to_bit1(Q)
        run = binary_search(dq, qq, 10)
        flat = search(build_index(dequantize_array(dq)), dequantize_array(qq), 10)
        assert run.same_ranking(flat)


class TestSizeReport:
    def test_hundred(self):
        r = size_report([Stage("pca", 245), Stage("bit1", 245, 1)], 768)
        assert r.ratio == pytest.approx(768 * 32 / 245)
        assert r.label() == "100x"

    def test_table(self):
        assert size_report([("pca", 128, 8)], 768).rounded_ratio == 24
        assert size_report([("bit1", 768, 1)], 768).rounded_ratio == 32
        assert size_report([("pca", 128)], 768).rounded_ratio == 6

    def test_amortized_excluded(self):
        r = size_report([Stage("pca", 128, 32, aux_params=128 * 768)], 768, n_items=10)
        assert r.ratio == 6.0
        assert r.amortized_bits == 32 * 128 * 768
        assert r.original_bits == 10 * 768 * 32

    def test_widening_rejected(self):
        with pytest.raises(DimensionMismatchError):
            size_report([("a", 10), ("b", 20)], 30)


class TestFiles:
    @pytest.mark.parametrize("scheme", ["fp16", "int8", "bit1"])
    def test_round_trip(self, scheme, tmp_path, rng):
        M = EmbeddingMatrix(tuple(f"id{i}" for i in range(7)), rng.normal(size=(7, 13)), "query")
        q = quantize(M, scheme)
        write_quantized(q, tmp_path / "x.vsq")
        assert read_quantized(tmp_path / "x.vsq").equals(q)

    def test_truncated(self, tmp_path, rng):
        q = to_fp16(rng.normal(size=(3, 4)))
        write_quantized(q, tmp_path / "x.vsq")
        raw = (tmp_path / "x.vsq").read_bytes()
        (tmp_path / "x.vsq").write_bytes(raw[:-1])
        with pytest.raises(FormatError):
            read_quantized(tmp_path / "x.vsq")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.vsq").write_bytes(b"\0" * 64)
        with pytest.raises(FormatError):
            read_quantized(tmp_path / "x.vsq")


class TestRetrieval:
    def test_offset_equivalence(self, small_bundle):
        post = PreprocessSpec(("center", "normalize"), "post")
        runs = []
        for alpha in (0.5, 0.0):
            b = small_bundle.replace(documents=dequantize(to_bit1(small_bundle.documents, alpha)),
                                     queries=dequantize(to_bit1(small_bundle.queries, alpha)))
            b = apply_spec(post, b)
            runs.append(evaluate(b.queries, b.documents, b.judgments)[1])
        assert runs[0].same_ranking(runs[1])
        for a, c in zip(runs[0].scores, runs[1].scores):
            np.testing.assert_allclose(a, c, atol=1e-12)

    def test_precision_ordering(self):
        means = []
        for scheme in ("fp16", "int8", "bit1"):
            scores = []
            for seed in range(5):
                b = generate_synthetic(n_clusters=20, intrinsic_dim=8, ambient_dim=32,
                                       docs_per_cluster=10, queries_per_cluster=3, seed=seed)
                b = apply_spec(PreprocessSpec(("center", "normalize")), b)
                red = PrecisionReducer(scheme).fit(b.documents.vectors)
                redq = PrecisionReducer(scheme).fit(b.queries.vectors)
                r = b.replace(documents=b.documents.with_vectors(red.transform(b.documents.vectors)),
                              queries=b.queries.with_vectors(redq.transform(b.queries.vectors)))
                r = apply_spec(PreprocessSpec(("center", "normalize"), "post"), r)
                scores.append(evaluate(r.queries, r.documents, r.judgments)[0])
            means.append(np.mean(scores))
        assert means[0] + 0.01 >= means[1] and means[1] + 0.01 >= means[2]


class TestEstimator:
    def test_transform_matches_functions(self, rng):
        X = rng.normal(size=(10, 6))
        np.testing.assert_array_equal(PrecisionReducer("int8").fit_transform(X),
                                      dequantize_array(to_int8(X)))
        np.testing.assert_array_equal(PrecisionReducer("bit1", 0.0).fit_transform(X),
                                      dequantize_array(to_bit1(X, 0.0)))
        np.testing.assert_array_equal(PrecisionReducer("fp16").fit_transform(X),
                                      dequantize_array(to_fp16(X)))

    def test_quantize_uses_fitted_params(self, rng):
        X = rng.normal(size=(10, 6))
        est = PrecisionReducer("int8").fit(X)
        q = est.quantize(X[:3])
        np.testing.assert_array_equal(q.offset, X.min(axis=0))

    def test_unknown_scheme(self, rng):
        with pytest.raises(ValueError):
            PrecisionReducer("int4").fit(rng.normal(size=(2, 2)))
