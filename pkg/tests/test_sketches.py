"""Counter-based sketch generation.

Bitwise determinism is the load-bearing property: materializing twice, or
materializing a column block versus slicing the full matrix, must agree
exactly.  Statistical quality checks are deliberately loose; they guard
against catastrophic generator bugs, not constants.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rand_matrix
from sketchpca.errors import InputError
from sketchpca import sketches as sk


class TestSeedDerivation:
    def test_deterministic(self):
        assert sk.derive_seed(42, "left") == sk.derive_seed(42, "left")
        assert sk.derive_seed(42, 7) == sk.derive_seed(42, 7)

    def test_labels_separate(self):
        seen = {sk.derive_seed(1, lab) for lab in ["a", "b", "c", 0, 1, 2, "0"]}
        assert len(seen) == 7

    def test_seeds_separate(self):
        assert sk.derive_seed(1, "x") != sk.derive_seed(2, "x")

    def test_bad_label(self):
        with pytest.raises(InputError):
            sk.derive_seed(1, 3.5)

    @given(st.integers(min_value=0, max_value=2**64 - 1))
    @settings(max_examples=50, deadline=None)
    def test_any_uint64_seed(self, seed):
        v = sk.derive_seed(seed, "t")
        assert 0 <= v < 2**64


class TestSignSketch:
    def test_entries_and_determinism(self):
        S = sk.sign_sketch(16, 40, seed=9)
        M = S.materialize()
        assert M.shape == (16, 40)
        assert np.all(np.abs(M) == 1.0 / math.sqrt(16))
        assert np.array_equal(M, sk.sign_sketch(16, 40, seed=9).materialize())
        assert not np.array_equal(M, sk.sign_sketch(16, 40, seed=10).materialize())

    def test_column_block_matches_slice(self):
        S = sk.sign_sketch(12, 100, seed=3)
        M = S.materialize()
        cols = [7, 19, 19, 63]
        assert sk.SignSketch.materialize_cols(S, cols).tobytes() == M[:, cols].tobytes()

    def test_probe_scale(self):
        P = sk.sign_sketch(6, 10, seed=1, scale=1.0).materialize()
        assert set(np.unique(P)) == {-1.0, 1.0}

    def test_balanced_signs(self):
        M = sk.sign_sketch(200, 500, seed=4, scale=1.0).materialize()
        frac = np.mean(M > 0)
        # 100k Bernoulli(1/2) draws: 5 sigma is ~0.008
        assert abs(frac - 0.5) < 0.01

    def test_norm_preservation_statistical(self):
        x = rand_matrix(0, 60, 1)[:, 0]
        ests = []
        for seed in range(30):
            S = sk.sign_sketch(400, 60, seed=seed).materialize()
            ests.append(np.sum((S @ x) ** 2))
        assert np.median(ests) == pytest.approx(np.sum(x**2), rel=0.15)

    def test_rows_uncorrelated(self):
        M = sk.sign_sketch(50, 2000, seed=8, scale=1.0).materialize()
        G = (M @ M.T) / 2000
        off = G - np.diag(np.diag(G))
        assert np.abs(off).max() < 0.12


class TestSrht:
    def test_fwht_matches_hadamard_oracle(self):
        H = np.array([[1.0]])
        while H.shape[0] < 16:
            H = np.block([[H, H], [H, -H]])
        X = np.round(8 * rand_matrix(2, 16, 5))
        assert np.array_equal(sk.fwht_axis0(X), H @ X)

    def test_fwht_rejects_non_pow2(self):
        with pytest.raises(InputError):
            sk.fwht_axis0(np.zeros((6, 2)))

    def test_matches_materialized_map(self):
        T = sk.srht_sketch(8, 13, seed=5)
        M = T.materialize()
        X = rand_matrix(3, 13, 4)
        assert np.allclose(T.apply_left(X), M @ X, atol=1e-12)

    def test_cap_makes_exact_isometry(self):
        # requesting more rows than the padded length keeps every row
        T = sk.srht_sketch(50, 13, seed=6)
        assert T.n_rows == 16 and T.n_pad == 16
        M = T.materialize()
        assert np.allclose(M.T @ M, np.eye(13), atol=1e-12)
        x = rand_matrix(4, 13, 1)
        assert np.sum(M @ x * (M @ x)) == pytest.approx(np.sum(x * x), rel=1e-12)

    def test_subsampling_without_replacement(self):
        T = sk.srht_sketch(10, 30, seed=7)
        assert T.n_rows == 10
        assert len(set(T.rows.tolist())) == 10
        assert np.all(np.diff(T.rows) > 0)

    def test_norm_preservation_statistical(self):
        x = rand_matrix(1, 24, 1)[:, 0]
        ests = [np.sum(sk.srht_sketch(16, 24, seed=s).apply_left(x) ** 2)
                for s in range(30)]
        assert np.median(ests) == pytest.approx(np.sum(x * x), rel=0.25)

    def test_deterministic(self):
        A = sk.srht_sketch(8, 20, seed=1).materialize()
        B = sk.srht_sketch(8, 20, seed=1).materialize()
        assert A.tobytes() == B.tobytes()


class TestSparseEmbedding:
    def test_one_nonzero_per_column(self):
        E = sk.sparse_embedding(9, 40, seed=2)
        M = E.materialize()
        assert np.all(np.count_nonzero(M, axis=0) == 1)
        assert set(np.unique(M[M != 0])) <= {-1.0, 1.0}

    def test_apply_matches_naive_loop_bitwise(self):
        E = sk.sparse_embedding(7, 25, seed=3)
        A = rand_matrix(5, 25, 6)
        out = np.zeros((7, 6))
        for j in range(25):  # canonical order: ascending column index
            out[E.buckets[j]] += E.signs[j] * A[j]
        assert E.apply_left(A).tobytes() == out.tobytes()

    def test_apply_right_matches_materialized(self):
        E = sk.sparse_embedding(6, 18, seed=4)
        A = rand_matrix(6, 9, 18)
        assert np.allclose(E.apply_right(A), A @ E.materialize().T, atol=1e-12)

    def test_buckets_roughly_uniform(self):
        E = sk.sparse_embedding(10, 5000, seed=5)
        counts = np.bincount(E.buckets, minlength=10)
        assert counts.min() > 350 and counts.max() < 650

    def test_shape_mismatch(self):
        E = sk.sparse_embedding(4, 10, seed=6)
        with pytest.raises(InputError):
            E.apply_left(rand_matrix(0, 11, 2))


class TestSizing:
    def test_frozen_default_dims(self):
        # hand-computed: ceil(4*5/0.25), ceil(10*5/0.5), ceil(8*100/0.25),
        # ceil(2*9/0.25), ceil(2*4/1)
        assert sk.dense_pca_dim(5, 0.5) == 80
        assert sk.regression_dim(5, 0.5) == 100
        assert sk.affine_dim(100, 0.5) == 3200
        assert sk.embedding_dim(3, 0.5) == 72
        assert sk.embedding_dim(2, 1.0) == 8

    def test_const_overrides(self):
        assert sk.dense_pca_dim(5, 0.5, const=1.0) == 20
        assert sk.regression_dim(3, 0.5, const=20.0) == 120

    def test_jlt_rows_frozen(self):
        # ceil(48 * ln 100) = ceil(221.048...) and ceil(64 * ln 200)
        assert sk.jlt_rows(100, beta=1.0) == 222
        assert sk.jlt_rows(200, beta=2.0) == 340

    def test_jlt_sketch_scale(self):
        J = sk.jlt_sketch(100, 30, seed=1)
        M = J.materialize()
        assert M.shape[0] == 222
        assert np.all(np.abs(M) == pytest.approx(1.0 / math.sqrt(222)))

    def test_size_guards(self):
        with pytest.raises(InputError):
            sk.dense_pca_dim(-1, 0.5)
        with pytest.raises(InputError):
            sk.dense_pca_dim(2, 0.0)

    def test_next_pow2(self):
        assert [sk.next_pow2(v) for v in (0, 1, 2, 3, 16, 17)] == [1, 1, 2, 4, 16, 32]
