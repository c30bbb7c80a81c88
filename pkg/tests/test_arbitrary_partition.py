"""Arbitrary-partition distributed PCA: branches, routing, and exact words."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import best_tail_sq, lowrank_plus_noise, rand_matrix, rank_exactly, split_rows
from sketchpca import arbitrary_partition as ap
from sketchpca.batch import batch_low_rank
from sketchpca.cluster import Cluster
from sketchpca.errors import InputError, ProtocolError
from sketchpca.linalg import residual_ratio


def _cluster_for(A, s, seed, **kw):
    return Cluster(split_rows(A, s, seed), **kw)


def _params(k=3, eps=0.5, seed=0, **kw):
    return ap.ArbProtocolParams(k=k, eps=eps, seed=seed, **kw)


class TestRankTest:
    @pytest.mark.parametrize("rank,expect", [(5, False), (6, True), (9, True)])
    def test_classifies_constructed_ranks(self, rank, expect):
        hits = 0
        for seed in range(20):
            A = rank_exactly(seed, 30, 30, rank)
            cl = _cluster_for(A, 3, seed=seed + 50)
            if ap.rank_test(cl, 3, seed=seed) == expect:
                hits += 1
        assert hits >= 19

    def test_cost_is_exactly_probe_size(self):
        for s in (1, 2, 5):
            cl = _cluster_for(rand_matrix(0, 20, 25), s, seed=1)
            ap.rank_test(cl, 4, seed=3)
            assert cl.ledger.total() == s * (4 * 16 + 2)
            assert cl.ledger.phase_totals() == {
                "rank-test-seed": 2 * s, "rank-test-up": 64 * s}

    def test_guards(self):
        cl = _cluster_for(rand_matrix(0, 10, 10), 2, seed=1)
        with pytest.raises(InputError):
            ap.rank_test(cl, 0, seed=1)
        with pytest.raises(InputError):
            ap.rank_test(cl, 2, seed=1, delta=2.0)


class TestLowRankBranch:
    def test_recovers_rank_at_most_k(self):
        A = rank_exactly(1, 24, 40, 3)
        cl = _cluster_for(A, 3, seed=2)
        res = ap.low_rank_protocol(cl, _params(k=3, seed=11))
        assert res.branch == "low-rank"
        assert residual_ratio(A, res.U, 3) == 1.0

    def test_between_k_and_2k(self):
        A = rank_exactly(2, 30, 30, 5, spread=2.0)
        cl = _cluster_for(A, 4, seed=3)
        res = ap.low_rank_protocol(cl, _params(k=3, seed=12))
        assert residual_ratio(A, res.U, 3) <= 1.5

    def test_direct_call_at_exactly_2k(self):
        A = rank_exactly(3, 28, 28, 6)
        cl = _cluster_for(A, 2, seed=4)
        res = ap.low_rank_protocol(cl, _params(k=3, seed=13))
        assert res.rank_test_full is True  # probe saturates at rank 2k
        assert residual_ratio(A, res.U, 3) <= 2.0

    def test_ledger_matches_closed_form(self):
        A = rank_exactly(4, 16, 50, 2)
        s, k = 3, 2
        cl = _cluster_for(A, s, seed=5)
        res = ap.low_rank_protocol(cl, _params(k=k, eps=0.5, seed=14))
        xi_a = 64  # ceil(8 * 2 / 0.25)
        want = {
            "rank-test-seed": 2 * s,
            "rank-test-up": 4 * k * k * s,
            "span-up": 2 * k * 16 * s,
            "span-down": 2 * k * 16 * s,
            "affine-up": xi_a * xi_a * s,
            "regress-up": 2 * k * xi_a * s,
            "u-down": 16 * k * s,
        }
        assert res.phase_words == want
        assert res.total_words == sum(want.values())

    def test_words_independent_of_width(self):
        k, s = 2, 3
        t1 = ap.low_rank_protocol(
            _cluster_for(rank_exactly(6, 16, 40, 2), s, seed=6),
            _params(k=k, seed=15)).total_words
        t2 = ap.low_rank_protocol(
            _cluster_for(rank_exactly(7, 16, 80, 2), s, seed=7),
            _params(k=k, seed=15)).total_words
        assert t1 == t2

    def test_zero_input_flagged(self):
        cl = Cluster([np.zeros((10, 12)) for _ in range(2)])
        res = ap.low_rank_protocol(cl, _params(k=2, seed=16))
        assert "zero-input" in res.flags
        U = res.U
        assert U.shape == (10, 2)
        assert np.allclose(U.T @ U, np.eye(2), atol=1e-12)

    def test_certificate_retry_then_success(self, monkeypatch):
        A = rank_exactly(8, 20, 30, 3)
        cl = _cluster_for(A, 2, seed=8)
        orig = ap._run_probe
        calls = {"n": 0}

        def tampered(cluster, k, seed):
            p = orig(cluster, k, seed)
            calls["n"] += 1
            if calls["n"] == 1:
                return ap._Probe(p.full, p.probe_rank + 1, p.Hl, p.Hrt)
            return p

        monkeypatch.setattr(ap, "_run_probe", tampered)
        res = ap.low_rank_protocol(cl, _params(k=2, seed=17))
        assert res.retried
        assert res.phase_words["rank-test-seed"] == 2 * 2 * 2  # two probes

    def test_certificate_double_failure_raises(self, monkeypatch):
        A = rank_exactly(9, 20, 30, 3)
        cl = _cluster_for(A, 2, seed=9)
        orig = ap._run_probe

        def always_bad(cluster, k, seed):
            p = orig(cluster, k, seed)
            return ap._Probe(p.full, p.probe_rank + 1, p.Hl, p.Hrt)

        monkeypatch.setattr(ap, "_run_probe", always_bad)
        with pytest.raises(ProtocolError):
            ap.low_rank_protocol(cl, _params(k=2, seed=18))


class TestSmoothedBranch:
    def test_trivial_partition_matches_batch_bitwise(self):
        # random data: sketched partials of the zero parts are exact zeros,
        # so the machine-order sum reproduces the batch products bit for bit
        A = lowrank_plus_noise(0, 24, 36, 3, 0.05)
        cl = Cluster([A, np.zeros_like(A), np.zeros_like(A)])
        res = ap.smoothed_protocol(cl, _params(k=3, seed=21, noise_scale=0.0))
        ref = batch_low_rank(A, 3, 0.5, seed=21)
        assert res.U.tobytes() == ref.U.tobytes()

    def test_real_partition_close_and_accurate(self):
        A = lowrank_plus_noise(1, 30, 40, 3, 0.05)
        cl = _cluster_for(A, 4, seed=2)
        res = ap.smoothed_protocol(cl, _params(k=3, seed=22, noise_scale=0.0))
        assert residual_ratio(A, res.U, 3) <= 1.5

    def test_phase_words_worked_example(self):
        # s=4 machines, m=16 rows, k=2, forced sketch size 8
        A = rand_matrix(3, 16, 30)
        cl = _cluster_for(A, 4, seed=3)
        res = ap.smoothed_protocol(
            cl, _params(k=2, seed=23, noise_scale=0.0, xi_sketch=8))
        assert res.phase_words == {
            "sketch-up": 256, "V-down": 64, "X-up": 128, "u-down": 128}

    def test_default_noise_perturbs(self):
        A = lowrank_plus_noise(4, 20, 25, 2, 0.1)
        cl = _cluster_for(A, 2, seed=4)
        res = ap.smoothed_protocol(cl, _params(k=2, seed=24))
        assert "perturbed" in res.flags
        assert residual_ratio(A, res.U, 2) <= 2.0

    def test_explicit_noise_obeys_weyl(self):
        # singular values move by at most the spectral norm of the
        # perturbation, which is at most eta * sqrt(m n)
        A = rand_matrix(5, 15, 18)
        eta = 1e-3
        cl = Cluster([A])
        ap.smoothed_protocol(cl, _params(k=2, seed=25, noise_scale=eta))
        E = eta * np.sign(np.random.default_rng(0).standard_normal((15, 18)))
        s0 = np.linalg.svd(A, compute_uv=False)
        s1 = np.linalg.svd(A + E, compute_uv=False)
        assert np.abs(s0 - s1).max() <= eta * np.sqrt(15 * 18) + 1e-12

    def test_rounding_bounds_factor_entries(self):
        A = lowrank_plus_noise(6, 20, 30, 2, 0.05)
        cl = _cluster_for(A, 2, seed=6)
        res = ap.smoothed_protocol(
            cl, _params(k=2, seed=26, noise_scale=0.0, rounding=1e-3))
        assert residual_ratio(A, res.U, 2) <= 2.0


class TestDispatcher:
    def test_routes_full_rank_to_smoothed(self):
        A = lowrank_plus_noise(0, 20, 30, 3, 0.2)
        cl = _cluster_for(A, 3, seed=1)
        res = ap.distributed_pca_arbitrary(cl, _params(k=3, seed=31, noise_scale=0.0))
        assert res.branch == "smoothed" and res.rank_test_full is True

    def test_routes_low_rank_branch(self):
        A = rank_exactly(1, 20, 30, 4)
        cl = _cluster_for(A, 3, seed=2)
        res = ap.distributed_pca_arbitrary(cl, _params(k=3, seed=32))
        assert res.branch == "low-rank" and res.rank_test_full is False
        assert residual_ratio(A, res.U, 3) <= 1.5

    def test_doubling_width_leaves_words_unchanged(self):
        k, s = 3, 3
        totals = []
        for n in (40, 80):
            A = lowrank_plus_noise(2, 24, n, 3, 0.1)
            cl = _cluster_for(A, s, seed=3)
            res = ap.distributed_pca_arbitrary(
                cl, _params(k=k, seed=33, noise_scale=0.0))
            assert res.branch == "smoothed"
            totals.append(res.total_words)
        assert totals[0] == totals[1]

    def test_total_includes_probe_and_branch(self):
        A = lowrank_plus_noise(4, 16, 22, 2, 0.1)
        s, k, xi, m = 2, 2, 32, 16
        cl = _cluster_for(A, s, seed=4)
        res = ap.distributed_pca_arbitrary(cl, _params(k=k, seed=34, noise_scale=0.0))
        want = (2 + 4 * k * k) * s + (xi * xi + xi * k + m * k + m * k) * s
        assert res.total_words == want

    def test_wrong_partition_kind_rejected(self):
        cl = Cluster([rand_matrix(0, 4, 3)], kind="column")
        with pytest.raises(InputError):
            ap.distributed_pca_arbitrary(cl, _params(k=1, seed=35))

    def test_deterministic_end_to_end(self):
        A = lowrank_plus_noise(5, 18, 24, 2, 0.1)
        runs = []
        for _ in range(2):
            cl = _cluster_for(A, 3, seed=5)
            runs.append(ap.distributed_pca_arbitrary(
                cl, _params(k=2, seed=36, noise_scale=0.0)))
        assert runs[0].U.tobytes() == runs[1].U.tobytes()
        assert runs[0].phase_words == runs[1].phase_words

    def test_parallel_mode_bitwise_identical(self):
        A = lowrank_plus_noise(6, 20, 28, 2, 0.1)
        parts = split_rows(A, 4, seed=6)
        res_seq = ap.distributed_pca_arbitrary(
            Cluster(parts), _params(k=2, seed=37, noise_scale=0.0))
        res_par = ap.distributed_pca_arbitrary(
            Cluster(parts, parallel=True), _params(k=2, seed=37, noise_scale=0.0))
        assert res_seq.U.tobytes() == res_par.U.tobytes()
        assert res_seq.phase_words == res_par.phase_words
