"""Distributed PCA over an arbitrary additive partition A = sum_i B_i.

A cheap 2k x 2k probe decides between two branches:

* low-rank branch, for inputs of rank at most 2k: the probe's right factor
  doubles as a span sketch, the server reconstructs a column space C = A H,
  and a small rank-constrained affine problem fits the best rank-k factor
  inside span(C);
* smoothed branch, for general inputs: machine 0 adds a tiny seeded
  perturbation to break spectral-gap degeneracies, then the cluster runs
  the batch two-sided sketch pipeline with per-machine partial sketches
  summed at the server, an optional quantization of the small right factor
  bounding the downlink word size.

Every phase has a closed-form word count that is independent of n except
through nothing at all: doubling the width of the input leaves the ledger
unchanged.  The protocol asserts its own ledger against those forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .batch import (
    TAG_NOISE,
    basis_from_lift,
    lift_through_right,
    pca_sketches,
    sketch_two_sided,
)
from .cluster import Cluster
from .errors import InputError, InternalError, ProtocolError, RetryWithNewSeed
from .linalg import (
    numeric_rank,
    rank_constrained_affine_solve,
    round_to_multiple,
    svd,
    truncated_svd,
)
from .sketches import affine_dim, dense_pca_dim, derive_seed, sign_sketch

TAG_RANK_TEST = "rank-test"
TAG_RANK_TEST_RETRY = "rank-test-retry"
TAG_PROBE_LEFT = "probe-left"
TAG_PROBE_RIGHT = "probe-right"
TAG_AFFINE_LEFT = "affine-left"
TAG_AFFINE_RIGHT = "affine-right"

DEFAULT_NOISE_REL = 1e-6


@dataclass(frozen=True)
class ArbProtocolParams:
    """Knobs for the arbitrary-partition protocol.

    noise_scale None picks the default relative perturbation; 0 disables
    the perturbation exactly (no-op, bit for bit).  rounding 0 likewise
    disables quantization of the downlinked factor.
    """

    k: int
    eps: float
    seed: int
    noise_scale: float | None = None
    rounding: float = 0.0
    xi_sketch: int | None = None
    xi_affine: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be at least 1")
        if not 0.0 < self.eps:
            raise InputError("eps must be positive")
        if self.rounding < 0.0:
            raise InputError("rounding granularity must be nonnegative")
        if self.noise_scale is not None and self.noise_scale < 0.0:
            raise InputError("noise scale must be nonnegative")


@dataclass
class ArbResult:
    """Distributed PCA output with its communication accounting."""

    U: np.ndarray
    rank: int
    deficient: bool
    branch: str
    flags: set[str]
    retried: bool
    rank_test_full: bool | None
    phase_words: dict[str, int]
    total_words: int
    params: ArbProtocolParams


@dataclass(frozen=True)
class _Probe:
    full: bool
    probe_rank: int
    Hl: np.ndarray
    Hrt: np.ndarray


def _run_probe(cluster: Cluster, k: int, probe_seed: int) -> _Probe:
    """Broadcast a probe seed, gather H' B_i H'', decide rank >= 2k.

    Costs exactly 2 words per machine for the seed and 4k^2 per machine for
    the probe moments: s * (4k^2 + 2) in total.
    """
    m, n = cluster.m, cluster.n
    Hl = sign_sketch(2 * k, m, derive_seed(probe_seed, TAG_PROBE_LEFT), scale=1.0).materialize()
    Hrt = sign_sketch(2 * k, n, derive_seed(probe_seed, TAG_PROBE_RIGHT), scale=1.0).materialize().T
    cluster.record_broadcast("rank-test-seed", 2)
    G = cluster.gather_sum(
        "rank-test-up",
        cluster.map_machines(lambda i, B: (Hl @ B) @ Hrt),
        4 * k * k)
    r = numeric_rank(G)
    return _Probe(r == 2 * k, r, Hl, Hrt)


def rank_test(cluster: Cluster, k: int, seed: int, delta: float = 1e-3) -> bool:
    """Decide whether rank(A) >= 2k from one 2k x 2k sketched moment.

    delta is the nominal failure probability knob; the fixed-size probe,
    which fails only on a measure-zero set of inputs for a random seed, does
    not consume it.  Communication: s * (4k^2 + 2) words.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    if not 0.0 < delta < 1.0:
        raise InputError("delta must be in (0, 1)")
    return _run_probe(cluster, k, derive_seed(seed, TAG_RANK_TEST)).full


def low_rank_protocol(cluster: Cluster, params: ArbProtocolParams,
                      probe: _Probe | None = None) -> ArbResult:
    """Exact-rank branch: valid when rank(A) <= 2k.

    The probe's right factor is reused as the span sketch, so C = A H''
    captures the whole column space of A with probability 1 over seeds.  A
    span certificate compares rank(C) with the probe rank; on mismatch the
    protocol retries once with a fresh seed before giving up.
    """
    k = params.k
    m = cluster.m
    s = cluster.s
    retried = False
    C = None
    probe_used = None
    for attempt in range(2):
        try:
            if attempt == 0 and probe is not None:
                cur = probe
            else:
                tag = TAG_RANK_TEST if attempt == 0 else TAG_RANK_TEST_RETRY
                cur = _run_probe(cluster, k, derive_seed(params.seed, tag))
            Hrt = cur.Hrt
            C_try = cluster.gather_sum(
                "span-up",
                cluster.map_machines(lambda i, B: B @ Hrt),
                m * 2 * k)
            if numeric_rank(C_try) != cur.probe_rank:
                raise RetryWithNewSeed(
                    f"span certificate failed: rank(C) != {cur.probe_rank}")
            C, probe_used = C_try, cur
            break
        except RetryWithNewSeed:
            if attempt == 1:
                raise ProtocolError("span certificate failed after reseeding") from None
            retried = True

    flags: set[str] = set()
    cluster.record_broadcast("span-down", m * 2 * k)

    xi_a = params.xi_affine if params.xi_affine is not None else affine_dim(k, params.eps)
    Tl = sign_sketch(xi_a, m, derive_seed(params.seed, TAG_AFFINE_LEFT)).materialize()
    Trr = sign_sketch(xi_a, cluster.n, derive_seed(params.seed, TAG_AFFINE_RIGHT)).materialize().T
    Msum = cluster.gather_sum(
        "affine-up",
        cluster.map_machines(lambda i, B: (Tl @ B) @ Trr),
        xi_a * xi_a)
    Lsum = cluster.gather_sum(
        "regress-up",
        cluster.map_machines(lambda i, B: (C.T @ B) @ Trr),
        2 * k * xi_a)

    N = Tl @ C
    X = rank_constrained_affine_solve(Msum, N, Lsum, k)
    P = C @ X
    r = numeric_rank(P)
    F = svd(P)
    U = F.U[:, :k]
    deficient = r < k
    if deficient:
        flags.add("rank-deficient")
    if not np.any(C):
        flags.add("zero-input")
    cluster.record_broadcast("u-down", m * k)

    phase_words = cluster.ledger.phase_totals()
    result = ArbResult(U, min(r, k), deficient, "low-rank", flags, retried,
                       probe_used.full, phase_words, cluster.ledger.total(), params)
    _assert_ledger(cluster, _expected_low_rank(s, m, k, xi_a, retried))
    return result


def smoothed_protocol(cluster: Cluster, params: ArbProtocolParams) -> ArbResult:
    """General branch: perturb, sketch both sides, solve small, lift.

    Runs the batch pipeline with partition-summed sketches; with zero noise
    and the trivial partition it reproduces batch_low_rank bit for bit.
    """
    k = params.k
    m, n = cluster.m, cluster.n
    s = cluster.s
    flags: set[str] = set()

    xi = params.xi_sketch if params.xi_sketch is not None else dense_pca_dim(k, params.eps)
    S, Tr = pca_sketches(m, n, k, params.eps, params.seed, xi, xi)

    eta = params.noise_scale
    if eta is None:
        A_norm = float(np.linalg.norm(cluster.materialize(), "fro"))
        eta = DEFAULT_NOISE_REL * A_norm / math.sqrt(max(m * n, 1))
    parts = list(cluster.parts)
    if eta > 0.0:
        noise = sign_sketch(m, n, derive_seed(params.seed, TAG_NOISE), scale=eta).materialize()
        parts[0] = parts[0] + noise
        flags.add("perturbed")

    small = cluster.gather_sum(
        "sketch-up",
        [sketch_two_sided(B, S, Tr) for B in parts],
        xi * xi)
    kk = min(k, min(small.shape))
    V = truncated_svd(small, kk).V
    V = round_to_multiple(V, params.rounding)
    cluster.record_broadcast("V-down", xi * kk)
    Xsum = cluster.gather_sum(
        "X-up",
        [lift_through_right(B, Tr, V) for B in parts],
        m * kk)
    U, r, deficient = basis_from_lift(Xsum)
    if deficient:
        flags.add("rank-deficient")
    cluster.record_broadcast("u-down", m * U.shape[1])

    result = ArbResult(U, r, deficient, "smoothed", flags, False, None,
                       cluster.ledger.phase_totals(), cluster.ledger.total(), params)
    _assert_ledger(cluster, _expected_smoothed(
        s, m, k, xi, kk, U.shape[1], with_probe=cluster.ledger.total_for("rank-test-seed") > 0))
    return result


def distributed_pca_arbitrary(cluster: Cluster, params: ArbProtocolParams) -> ArbResult:
    """Probe the rank, then run the branch the outcome calls for.

    A full probe (rank 2k) routes to the smoothed branch: the 2k x 2k probe
    cannot distinguish rank exactly 2k from higher rank, and the smoothed
    branch is correct for both.  A deficient probe certifies rank < 2k and
    routes to the low-rank branch.
    """
    if cluster.kind != "arbitrary":
        raise InputError("this protocol needs an arbitrary additive partition")
    probe = _run_probe(cluster, params.k, derive_seed(params.seed, TAG_RANK_TEST))
    if probe.full:
        result = smoothed_protocol(cluster, params)
    else:
        result = low_rank_protocol(cluster, params, probe=probe)
    result.rank_test_full = probe.full
    return result


# -- closed-form ledger checks -----------------------------------------


def _expected_low_rank(s: int, m: int, k: int, xi_a: int, retried: bool) -> dict[str, int]:
    # one probe plus one span gather per attempt, whoever recorded the probe
    probes = 1 + (1 if retried else 0)
    span_ups = probes
    return {
        "rank-test-seed": 2 * s * probes,
        "rank-test-up": 4 * k * k * s * probes,
        "span-up": 2 * k * m * s * span_ups,
        "span-down": 2 * k * m * s,
        "affine-up": xi_a * xi_a * s,
        "regress-up": 2 * k * xi_a * s,
        "u-down": m * k * s,
    }


def _expected_smoothed(s: int, m: int, k: int, xi: int, kk: int, u_cols: int,
                       with_probe: bool) -> dict[str, int]:
    out = {
        "sketch-up": xi * xi * s,
        "V-down": xi * kk * s,
        "X-up": m * kk * s,
        "u-down": m * u_cols * s,
    }
    if with_probe:
        out["rank-test-seed"] = 2 * s
        out["rank-test-up"] = 4 * k * k * s
    return out


def _assert_ledger(cluster: Cluster, expected: dict[str, int]) -> None:
    got = cluster.ledger.phase_totals()
    if got != expected:
        raise InternalError(f"ledger mismatch: got {got}, expected {expected}")
    if cluster.ledger.total() != sum(expected.values()):
        raise InternalError("ledger total does not equal the sum of its phases")
