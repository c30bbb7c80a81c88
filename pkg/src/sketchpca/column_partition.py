"""Distributed PCA for column-partitioned, column-sparse matrices.

Machine i owns a contiguous block of columns.  The protocol ships actual
columns, never dense sketches of them, so the uplink cost tracks the column
sparsity: a column with z nonzeros costs 2z + 1 words.

Four stages:

1. local selection: each machine runs the barrier sampler on its own block
   and uploads the chosen columns verbatim;
2. global selection: the server distills those to a core set C of c1
   columns with the deterministic CSS guarantee and broadcasts it;
3. adaptive residual sampling: machines report one-word rounded residual
   magnitudes, the server splits a budget of c2 draws across machines
   proportionally, and machines upload residual-sampled columns verbatim
   (phase "adaptive" counts only these column words; the two quantized
   scalars per machine ride in "adaptive-meta");
4. finalize: a shared seeded sign sketch turns one pass over the blocks
   into the best rank-k basis inside span of the collected columns.

The server does the finalize once and downlinks U; a per-machine variant
(broadcast the small sketched matrix, everyone finalizes identically)
is available behind a flag.

Every phase total is recomputed from first principles after the run and
compared with the ledger, so the accounting is double-entry checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import Cluster
from .column_select import (
    SamplingMatrix,
    bss_sampling,
    deterministic_css,
    residual_beta,
    sample_proportional,
)
from .errors import InputError, InternalError
from .linalg import orthonormal_basis, pinv, truncated_svd
from .sketches import affine_dim, derive_seed, sign_sketch

TAG_ADAPTIVE_MACHINES = "css-adaptive-machines"
TAG_ADAPTIVE_COLS = "css-adaptive-cols"
TAG_CSS_SUBSPACE = "css-subspace"


@dataclass(frozen=True)
class CssProtocolParams:
    """Budgets for the column-partition protocol; None picks defaults
    derivable from (k, eps) alone, so machines can resolve them without
    communication."""

    k: int
    eps: float
    seed: int
    ell: int | None = None
    c1: int | None = None
    c2: int | None = None
    xi_subspace: int | None = None
    per_machine_finalize: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be at least 1")
        if not 0.0 < self.eps:
            raise InputError("eps must be positive")

    def resolve(self) -> tuple[int, int, int, int]:
        k, eps = self.k, self.eps
        ell = self.ell if self.ell is not None else 4 * k
        c1 = self.c1 if self.c1 is not None else 4 * k
        c2 = self.c2 if self.c2 is not None else math.ceil(50.0 * k / eps)
        xi = self.xi_subspace if self.xi_subspace is not None else affine_dim(c1 + c2, eps)
        if ell <= k or c1 <= k:
            raise InputError("budgets ell and c1 must exceed k")
        if c2 < 0 or xi < 1:
            raise InputError("c2 must be nonnegative and xi positive")
        return ell, c1, c2, xi


@dataclass
class CssPcaResult:
    U: np.ndarray
    rank: int
    flags: set[str]
    core_indices: list[int]
    adaptive_indices: list[int]
    c_actual: int
    xi: int
    betas: list[float]
    draws_per_machine: list[int]
    phase_words: dict[str, int]
    total_words: int
    params: CssProtocolParams


def _col_words(column: np.ndarray) -> int:
    return 2 * int(np.count_nonzero(column)) + 1


def _cols_words(block: np.ndarray) -> int:
    return sum(_col_words(block[:, t]) for t in range(block.shape[1]))


def _local_select(Ai: np.ndarray, k: int, ell: int, flags: set[str]) -> np.ndarray:
    n_i = Ai.shape[1]
    if n_i <= ell:
        if n_i <= k:
            flags.add("local-tiny")
        return np.arange(n_i, dtype=np.int64)
    ki = min(k, Ai.shape[0], n_i)
    F = truncated_svd(Ai, ki)
    E = Ai - (Ai @ F.V) @ F.V.T
    return bss_sampling(F.V, E, ell).indices


def distributed_css_pca(cluster: Cluster, params: CssProtocolParams) -> CssPcaResult:
    """Run the four-stage column-selection protocol on a column partition."""
    if cluster.kind != "column":
        raise InputError("this protocol needs a column partition")
    k = params.k
    ell, c1, c2, xi = params.resolve()
    s, m, n = cluster.s, cluster.m, cluster.n
    flags: set[str] = set()

    # stage 1: local selection, verbatim uploads
    local_idx = cluster.map_machines(
        lambda i, p: _local_select(cluster.part_dense(i), k, ell, flags))
    local_blocks = [cluster.part_dense(i)[:, idx] for i, idx in enumerate(local_idx)]
    cluster.record_gather("local-up", [_cols_words(b) for b in local_blocks])
    G = np.hstack(local_blocks)
    gids = np.concatenate([cluster.col_offsets[i] + idx
                           for i, idx in enumerate(local_idx)])

    # stage 2: global core selection
    if G.shape[1] <= c1:
        flags.add("core-all")
        core_pos = np.arange(G.shape[1], dtype=np.int64)
        C = G
    else:
        core = deterministic_css(G, k, c1)
        core_pos = core.indices
        C = core.columns
    core_gids = [int(g) for g in gids[core_pos]]
    cluster.record_broadcast("global-down", _cols_words(C))

    # stage 3: adaptive residual sampling
    Yc = orthonormal_basis(C)
    col_masses = []
    r2s = []
    for i in range(s):
        Ai = cluster.part_dense(i)
        Psi = Ai - Yc @ (Yc.T @ Ai)
        mass = np.sum(Psi * Psi, axis=0)
        col_masses.append(mass)
        r2s.append(float(mass.sum()))
    betas = [residual_beta(r2) for r2 in r2s]
    cluster.record_gather("adaptive-meta", 1)

    adaptive_gids: list[int] = []
    adaptive_blocks: list[np.ndarray] = []
    if sum(betas) <= 0.0:
        flags.add("no-adaptive")
        draws = [0] * s
        cluster.record_broadcast("adaptive-meta", 1)
        cluster.record_gather("adaptive", 0)
    else:
        picks = sample_proportional(
            np.asarray(betas), c2, derive_seed(params.seed, TAG_ADAPTIVE_MACHINES))
        draws = np.bincount(picks, minlength=s).tolist()
        cluster.record_broadcast("adaptive-meta", 1)
        up_words = []
        for i in range(s):
            if draws[i] == 0:
                up_words.append(0)
                continue
            sub_seed = derive_seed(derive_seed(params.seed, TAG_ADAPTIVE_COLS), i)
            idx = sample_proportional(col_masses[i], draws[i], sub_seed)
            block = cluster.part_dense(i)[:, idx]
            adaptive_blocks.append(block)
            adaptive_gids.extend(int(cluster.col_offsets[i] + j) for j in idx)
            up_words.append(_cols_words(block))
        cluster.record_gather("adaptive", up_words)
    new_cols = np.hstack(adaptive_blocks) if adaptive_blocks else np.zeros((m, 0))
    cluster.record_broadcast("span-down", _cols_words(new_cols))
    C_full = np.hstack([C, new_cols])

    # stage 4: one-pass subspace finalize with a shared seeded sketch
    W = sign_sketch(xi, n, derive_seed(params.seed, TAG_CSS_SUBSPACE), scale=1.0)
    c_actual = C_full.shape[1]

    def sketch_block(i, part):
        lo, hi = cluster.col_offsets[i], cluster.col_offsets[i + 1]
        Wi_t = W.materialize_cols(np.arange(lo, hi)).T
        Ai = cluster.part_dense(i)
        return C_full.T @ (Ai @ Wi_t)

    Xi_raw = cluster.gather_sum(
        "subspace-up", cluster.map_machines(sketch_block), c_actual * xi)
    Y = orthonormal_basis(C_full)
    Gmat = Y.T @ C_full
    Xi = pinv(Gmat.T) @ Xi_raw
    kk = min(k, min(Xi.shape))
    Delta = truncated_svd(Xi, kk).U
    U = Y @ Delta
    if kk < k:
        flags.add("rank-deficient")

    if params.per_machine_finalize:
        cluster.record_broadcast("xi-down", Xi.size)
        replicas = cluster.map_machines(
            lambda i, p: Y @ truncated_svd(Xi, kk).U)
        for R in replicas:
            if R.tobytes() != U.tobytes():
                raise InternalError("per-machine finalize diverged from the server")
    else:
        cluster.record_broadcast("u-down", m * kk)

    result = CssPcaResult(
        U, kk, flags, core_gids, adaptive_gids, c_actual, xi, betas, draws,
        cluster.ledger.phase_totals(), cluster.ledger.total(), params)
    _assert_ledger(cluster, result, local_blocks, C, new_cols, Xi.shape)
    return result


def _assert_ledger(cluster: Cluster, result: CssPcaResult,
                   local_blocks: list[np.ndarray], core: np.ndarray,
                   adaptive: np.ndarray, xi_shape: tuple[int, int]) -> None:
    """Recompute every phase from the shipped payloads; double-entry check."""
    s = cluster.s
    expected = {
        "local-up": sum(_cols_words(b) for b in local_blocks),
        "global-down": s * _cols_words(core),
        "adaptive-meta": 2 * s,
        "adaptive": _cols_words(adaptive),
        "span-down": s * _cols_words(adaptive),
        "subspace-up": s * result.c_actual * result.xi,
    }
    if result.params.per_machine_finalize:
        expected["xi-down"] = s * xi_shape[0] * xi_shape[1]
    else:
        expected["u-down"] = s * result.U.shape[0] * result.rank
    got = cluster.ledger.phase_totals()
    if got != expected:
        raise InternalError(f"ledger mismatch: got {got}, expected {expected}")
    if cluster.ledger.total() != sum(got.values()):
        raise InternalError("ledger total does not equal the sum of its phases")
