"""Entry-touch-time column selection kernels and the sketched protocol.

The exact kernels in column_select form dense residual matrices; here every
pass over the data goes through a one-nonzero-per-column embedding or a sign
JL map, so the work per operation is proportional to the number of stored
entries plus sketch-sized dense algebra.  The price is randomness: each
kernel fails with some probability, and the repeated-candidate wrappers
(boosted SVD, repeated barrier sampling) drive that probability down by
scoring candidates against sketched costs and keeping a certified winner.

A module-level touch counter records how many times kernels pass over the
stored entries.  Tests pin exact per-operation counts, which is the teeth
behind the "never densify the input" rule: any shortcut through to_dense
would show up as a miscount.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .cluster import Cluster
from .column_select import (
    AdaptiveSample,
    CssResult,
    SamplingMatrix,
    bss_sampling,
    residual_beta,
    sample_proportional,
)
from .column_partition import (
    TAG_ADAPTIVE_COLS,
    TAG_ADAPTIVE_MACHINES,
    TAG_CSS_SUBSPACE,
    _assert_ledger,
)
from .errors import InputError, InternalError
from .linalg import as_matrix, orthonormal_basis, pinv, qr, truncated_svd
from .sketches import (
    SparseEmbedding,
    derive_seed,
    embedding_dim,
    jlt_sketch,
    sparse_embedding,
)
from .sparse import SparseColMatrix

TAG_SVD_LEFT = "sparse-svd-left"
TAG_SVD_RIGHT = "sparse-svd-right"
TAG_BOOST = "svd-boost"
TAG_BOOST_SCORE = "svd-boost-score"
TAG_BSS_EMBED = "bss-embed"
TAG_FAST_CSS_SVD = "fast-css-svd"
TAG_FAST_CSS_BSS = "fast-css-bss"
TAG_ADAPTIVE_JLT = "adaptive-jlt"
TAG_SUBSPACE_EMBED = "subspace-embed"
TAG_FAST_LOCAL_SVD = "fast-local-svd"
TAG_FAST_LOCAL_BSS = "fast-local-bss"
TAG_FAST_CORE = "fast-core"
TAG_FAST_JLT = "fast-residual-jlt"

_POST_SLACK = 1e-9

# internal constants for the once-per-protocol global selector
_CSS_SPARSE_EPS = 0.5
_CSS_SPARSE_DELTA = 0.125


class TouchCounter:
    """Counts kernel passes over stored entries, one tick per entry."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.count += int(n)

    def reset(self) -> None:
        with self._lock:
            self.count = 0


TOUCHES = TouchCounter()


@dataclass(frozen=True)
class FastParams:
    """Budgets shared by the sketched kernels, derived from (k, eps, delta).

    repeats is the candidate count for the boosting wrappers, embed_xi the
    bucket count of the column embeddings, jlt_beta the failure exponent of
    the scoring JL map.
    """

    k: int
    eps: float
    delta: float
    repeats: int = field(init=False)
    embed_xi: int = field(init=False)
    jlt_beta: float = field(init=False)

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be at least 1")
        if not 0.0 < self.eps <= 1.0:
            raise InputError("eps must be in (0, 1]")
        if not 0.0 < self.delta <= 1.0:
            raise InputError("delta must be in (0, 1]")
        object.__setattr__(
            self, "repeats", max(1, math.ceil(math.log2(1.0 / self.delta)) + 1))
        object.__setattr__(self, "embed_xi", embedding_dim(self.k, self.eps))
        object.__setattr__(self, "jlt_beta", 1.0)


def subspace_embed_dim(c: int, eps: float, n: int) -> int:
    """Buckets for a column embedding good for a c-dimensional coefficient
    space: ceil(2 c^2 / eps^2), capped at twice the column count since more
    buckets than that only pad the sketch with structural zeros."""
    if c < 1 or n < 1:
        raise InputError("subspace embedding needs c >= 1 and n >= 1")
    if not 0.0 < eps:
        raise InputError("eps must be positive")
    nominal = max(1, math.ceil(2.0 * c * c / eps**2))
    return max(1, min(nominal, 2 * n))


# -- sparse-aware kernel applications ----------------------------------


def _as_sparse(A) -> SparseColMatrix:
    if isinstance(A, SparseColMatrix):
        return A
    return SparseColMatrix.from_dense(as_matrix(A, "A"))


def embed_rows(emb: SparseEmbedding, A: SparseColMatrix) -> np.ndarray:
    """emb @ A against column-sparse A, one touch per stored entry.

    Entries accumulate in storage order (ascending column, ascending row
    within a column), which matches the dense apply_left bitwise.
    """
    if emb.n_cols != A.n_rows:
        raise InputError("embedding width disagrees with the matrix rows")
    out = np.zeros((emb.n_rows, A.n_cols))
    cols = np.repeat(np.arange(A.n_cols, dtype=np.int64), np.diff(A.indptr))
    np.add.at(out, (emb.buckets[A.indices], cols), emb.signs[A.indices] * A.data)
    TOUCHES.add(A.nnz)
    return out


def embed_cols(emb: SparseEmbedding, A: SparseColMatrix, col_base: int = 0) -> np.ndarray:
    """A @ emb.T where A's columns are emb columns col_base onward.

    col_base lets a machine sketch its block of a column partition against
    a globally seeded embedding without materializing the other blocks.
    """
    if col_base < 0 or col_base + A.n_cols > emb.n_cols:
        raise InputError("column block does not fit inside the embedding")
    out = np.zeros((A.n_rows, emb.n_rows))
    cols = col_base + np.repeat(np.arange(A.n_cols, dtype=np.int64), np.diff(A.indptr))
    np.add.at(out, (A.indices, emb.buckets[cols]), emb.signs[cols] * A.data)
    TOUCHES.add(A.nnz)
    return out


def dense_times_sparse(M: np.ndarray, A: SparseColMatrix) -> np.ndarray:
    """M @ A for a dense M, gathering the touched columns of M per entry."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[1] != A.n_rows:
        raise InputError("operand columns disagree with the matrix rows")
    out = np.zeros((M.shape[0], A.n_cols))
    for j in range(A.n_cols):
        lo, hi = A.indptr[j], A.indptr[j + 1]
        if lo != hi:
            out[:, j] = M[:, A.indices[lo:hi]] @ A.data[lo:hi]
    TOUCHES.add(A.nnz)
    return out


def right_multiply(A: SparseColMatrix, M: np.ndarray) -> np.ndarray:
    """A @ M, accumulating column contributions in ascending column order."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] != A.n_cols:
        raise InputError("operand rows disagree with the matrix columns")
    out = np.zeros((A.n_rows, M.shape[1]))
    for j in range(A.n_cols):
        rows, vals = A.col(j)
        if rows.size:
            out[rows, :] += vals[:, None] * M[j, :]
    TOUCHES.add(A.nnz)
    return out


def _hstack_sparse(blocks: list[SparseColMatrix], n_rows: int) -> SparseColMatrix:
    indptr = [np.zeros(1, dtype=np.int64)]
    off = 0
    for b in blocks:
        indptr.append(b.indptr[1:] + off)
        off += b.nnz
    n_cols = sum(b.n_cols for b in blocks)
    cat = lambda parts, dt: (np.concatenate(parts) if parts else np.zeros(0, dt))
    return SparseColMatrix(
        (n_rows, n_cols), np.concatenate(indptr),
        cat([b.indices for b in blocks], np.int64),
        cat([b.data for b in blocks], np.float64), validate=False)


# -- implicit residuals -------------------------------------------------


class ResidualOperator:
    """The residual A - A Z Z^T held implicitly.

    Sketches of the residual come from sketching A once and correcting in
    sketch space, so the dense m x w residual never exists.  Z must have
    orthonormal columns for frob_sq's cancellation identity to hold.
    """

    def __init__(self, A, Z):
        self.A = _as_sparse(A)
        self.Z = as_matrix(Z, "Z")
        if self.Z.shape[0] != self.A.n_cols:
            raise InputError("Z must have one row per column of A")
        self._az: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def _a_times_z(self) -> np.ndarray:
        if self._az is None:
            self._az = right_multiply(self.A, self.Z)
        return self._az

    def sketch_rows(self, emb: SparseEmbedding) -> np.ndarray:
        Y = embed_rows(emb, self.A)
        return Y - (Y @ self.Z) @ self.Z.T

    def frob_sq(self) -> float:
        return max(0.0, self.A.frob_sq() - float(np.sum(self._a_times_z() ** 2)))

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        return (self.A.take_columns(idx).to_dense()
                - self._a_times_z() @ self.Z[idx, :].T)


class _PlainResidual:
    """Adapter giving an explicit matrix the ResidualOperator interface."""

    def __init__(self, E):
        self.E = E if isinstance(E, SparseColMatrix) else as_matrix(E, "E")

    @property
    def shape(self):
        return self.E.shape

    def sketch_rows(self, emb: SparseEmbedding) -> np.ndarray:
        if isinstance(self.E, SparseColMatrix):
            return embed_rows(emb, self.E)
        return emb.apply_left(self.E)

    def frob_sq(self) -> float:
        if isinstance(self.E, SparseColMatrix):
            return self.E.frob_sq()
        return float(np.sum(self.E * self.E))

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if isinstance(self.E, SparseColMatrix):
            return self.E.take_columns(idx).to_dense()
        return self.E[:, idx]


def _as_residual(E):
    if isinstance(E, ResidualOperator):
        return E
    return _PlainResidual(E)


# -- approximate SVD ----------------------------------------------------


def sparse_svd(A, k: int, eps: float, seed: int) -> np.ndarray:
    """Orthonormal right factors Z (n x k) with near-best projection error.

    Two-sided embedding pipeline run against the transpose: compress the
    rows, then the columns, take the top-k left factors of the small core,
    and lift back through the row sketch.  One touch per stored entry; the
    dense work is on xi-sized sketches only.
    """
    A = _as_sparse(A)
    m, n = A.shape
    if not 1 <= k < min(m, n):
        raise InputError(f"k={k} out of range for shape {A.shape}")
    xi = embedding_dim(k, eps)
    left = sparse_embedding(xi, m, derive_seed(seed, TAG_SVD_LEFT))
    right = sparse_embedding(xi, n, derive_seed(seed, TAG_SVD_RIGHT))
    Y = embed_rows(left, A)
    core = right.apply_right(Y)
    top = truncated_svd(core, k).U
    Q, _ = qr(Y.T @ top)
    return Q


def sparse_svd_boosting(A, k: int, eps: float, delta: float, seed: int) -> np.ndarray:
    """Best of repeated sparse SVDs, judged by a JL-sketched residual.

    Generates repeats = ceil(log2(1/delta)) + 1 candidates on sub-seeds
    derive(derive(seed, TAG_BOOST), i) and keeps the one minimizing
    ||S A - (S A Z) Z^T||_F^2 for one shared sign JL map S; the dense
    residual is never formed.  Ties keep the lowest candidate index.
    """
    A = _as_sparse(A)
    params = FastParams(k, eps, delta)
    cands = [
        sparse_svd(A, k, eps, derive_seed(derive_seed(seed, TAG_BOOST), i))
        for i in range(params.repeats)
    ]
    S = jlt_sketch(max(A.n_cols, 1), A.n_rows,
                   derive_seed(seed, TAG_BOOST_SCORE), params.jlt_beta)
    SA = dense_times_sparse(S.materialize(), A)
    scores = [float(np.sum((SA - (SA @ Z) @ Z.T) ** 2)) for Z in cands]
    return cands[int(np.argmin(scores))]


# -- repeated barrier sampling ------------------------------------------


def _select_top_two_thirds(spectral: np.ndarray, residual: np.ndarray) -> int:
    """Lowest index ranked in the top two thirds of both lists.

    spectral ranks descending (bigger is better), residual ascending.
    Ties keep the earlier candidate.  By counting, at least one index sits
    in both top fractions; failing to find one means the lists are broken.
    """
    r = spectral.size
    cut = math.ceil(2.0 * r / 3.0)
    rank_s = np.empty(r, dtype=np.int64)
    rank_s[np.argsort(-spectral, kind="stable")] = np.arange(r)
    rank_c = np.empty(r, dtype=np.int64)
    rank_c[np.argsort(residual, kind="stable")] = np.arange(r)
    ok = (rank_s < cut) & (rank_c < cut)
    if not np.any(ok):
        raise InternalError("no candidate ranks in the top two thirds of both lists")
    return int(np.argmax(ok))


def bss_sampling_sparse(V, E, ell: int, eps: float, delta: float,
                        seed: int) -> SamplingMatrix:
    """Barrier-walk column sampling driven by sketched residual costs.

    Runs the exact sampler against repeated embedded copies of E, ranks the
    candidates by sigma_k^2(V^T S) (descending) and by sketched residual
    mass (ascending), and keeps the lowest-index candidate in the top two
    thirds of both rankings.  Postconditions are asserted against the true
    residual with the embedding distortion slack ((1+eps)/(1-eps))^2.

    E may be a matrix (dense or column-sparse) or a ResidualOperator.
    """
    V = as_matrix(V, "V")
    res = _as_residual(E)
    w, k = V.shape
    if res.shape[1] != w:
        raise InputError("E must have one column per row of V")
    if not 0.0 < eps < 1.0:
        raise InputError("eps must be in (0, 1) for the distortion slack")
    params = FastParams(max(k, 1), eps, delta)
    cands: list[SamplingMatrix] = []
    sig_sq = np.zeros(params.repeats)
    cost = np.zeros(params.repeats)
    for i in range(params.repeats):
        emb = sparse_embedding(
            params.embed_xi, res.shape[0],
            derive_seed(derive_seed(seed, TAG_BSS_EMBED), i))
        B = res.sketch_rows(emb)
        S = bss_sampling(V, B, ell)
        cands.append(S)
        sig = np.linalg.svd(S.apply_to(V.T), compute_uv=False)
        sig_sq[i] = sig[k - 1] ** 2
        cost[i] = float(np.sum(S.apply_to(B) ** 2))
    S = cands[_select_top_two_thirds(sig_sq, cost)]

    lower = (1.0 - math.sqrt(k / ell)) ** 2
    sig = np.linalg.svd(S.apply_to(V.T), compute_uv=False)
    if sig[k - 1] ** 2 < lower * (1.0 - _POST_SLACK):
        raise InternalError(
            f"spectral floor violated: {sig[k - 1] ** 2:.3e} < {lower:.3e}")
    true_cols = res.columns(S.indices)
    es = float(np.sum((true_cols * S.weights[None, :]) ** 2))
    ee = res.frob_sq()
    slack = ((1.0 + eps) / (1.0 - eps)) ** 2
    if es > ee * slack * (1.0 + _POST_SLACK) + 1e-12:
        raise InternalError(
            f"residual mass grew past the distortion slack: {es:.6e} > "
            f"{slack:.3f} * {ee:.6e}")
    return S


def deterministic_css_sparse(G, k: int, c: int, seed: int) -> CssResult:
    """Pick c = 4k columns whose span nearly carries the top-k structure,
    in time proportional to the stored entries.

    Approximate right factors stand in for the exact SVD and sketched
    costs drive the barrier walk; the price is a constant-factor residual
    bound holding with constant probability instead of always, so the
    quality contract is property-tested rather than asserted here.
    """
    G = _as_sparse(G)
    if k < 1:
        raise InputError("k must be at least 1")
    if c != 4 * k:
        raise InputError(f"this selector is tuned for c = 4k, got c={c}")
    if c > G.n_cols:
        raise InputError(f"need c <= n_cols, got c={c} for shape {G.shape}")
    Z = sparse_svd(G, k, _CSS_SPARSE_EPS, derive_seed(seed, TAG_FAST_CSS_SVD))
    S = bss_sampling_sparse(
        Z, ResidualOperator(G, Z), c, _CSS_SPARSE_EPS, _CSS_SPARSE_DELTA,
        derive_seed(seed, TAG_FAST_CSS_BSS))
    return CssResult(S.indices, G.take_columns(S.indices).to_dense(), S)


# -- sketched adaptive sampling and subspace SVD ------------------------


def adaptive_cols_sparse(A, V, c2: int, beta: float, seed: int) -> AdaptiveSample:
    """Residual-proportional column sampling with the residual norms read
    off a sign JL sketch instead of the dense residual.

    beta plays the same interface role as in the exact version; the
    probabilities are exact with respect to the sketched residual.
    """
    A = _as_sparse(A)
    V = as_matrix(V, "V")
    if V.shape[0] != A.n_rows:
        raise InputError("V must have the same number of rows as A")
    if beta <= 0:
        raise InputError("beta must be positive")
    S = jlt_sketch(max(A.n_cols, 1), A.n_rows,
                   derive_seed(seed, TAG_ADAPTIVE_JLT))
    Smat = S.materialize()
    SA = dense_times_sparse(Smat, A)
    Y = orthonormal_basis(V)
    coeff = dense_times_sparse(Y.T, A)
    sketched = SA - (Smat @ Y) @ coeff
    mass = np.sum(sketched * sketched, axis=0)
    total = float(mass.sum())
    scale = max(1.0, A.frob_sq())
    if total <= 1e-24 * scale:
        return AdaptiveSample(np.zeros(0, dtype=np.int64), np.zeros(A.n_cols), True)
    probs = mass / total
    idx = sample_proportional(mass, c2, seed)
    return AdaptiveSample(idx, probs, False)


def approx_subspace_svd_sparse(A, V, k: int, eps: float, seed: int):
    """Near-best rank-k basis inside span(V), right sketch replaced by a
    one-nonzero-per-column embedding applied in one pass over the entries."""
    from .column_select import SubspaceSvdResult

    A = _as_sparse(A)
    V = as_matrix(V, "V")
    if V.shape[0] != A.n_rows:
        raise InputError("V must have the same number of rows as A")
    if k < 1:
        raise InputError("k must be at least 1")
    Y = orthonormal_basis(V)
    xi = subspace_embed_dim(max(V.shape[1], 1), eps, max(A.n_cols, 1))
    emb = sparse_embedding(xi, A.n_cols, derive_seed(seed, TAG_SUBSPACE_EMBED))
    P = Y.T @ embed_cols(emb, A)
    kk = min(k, min(P.shape))
    top = truncated_svd(P, kk).U
    return SubspaceSvdResult(Y @ top, Y, top, xi)


# -- the sketched four-stage protocol -----------------------------------


@dataclass(frozen=True)
class FastCssProtocolParams:
    """Budgets for the sketched column-partition protocol.

    c1 is pinned at 4k because the global selector's constant-factor
    guarantee is tuned to exactly that budget; everything else mirrors the
    exact protocol.  delta is the total failure budget split across the
    per-machine kernels.
    """

    k: int
    eps: float
    seed: int
    delta: float = 0.05
    ell: int | None = None
    c2: int | None = None
    xi_subspace: int | None = None
    per_machine_finalize: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be at least 1")
        if not 0.0 < self.eps:
            raise InputError("eps must be positive")
        if not 0.0 < self.delta < 1.0:
            raise InputError("delta must be in (0, 1)")

    def resolve(self, n: int) -> tuple[int, int, int, int]:
        k, eps = self.k, self.eps
        ell = self.ell if self.ell is not None else 4 * k
        c1 = 4 * k
        c2 = self.c2 if self.c2 is not None else math.ceil(50.0 * k / eps)
        xi = (self.xi_subspace if self.xi_subspace is not None
              else subspace_embed_dim(c1 + c2, eps, n))
        if ell <= k:
            raise InputError("budget ell must exceed k")
        if c2 < 0 or xi < 1:
            raise InputError("c2 must be nonnegative and xi positive")
        return ell, c1, c2, xi


def distributed_css_pca_fast(cluster: Cluster, params: FastCssProtocolParams):
    """Sketched variant of the four-stage column-selection protocol.

    Local selection runs boosted sparse SVDs plus sketched barrier
    sampling, the global core selector and the finalize sketch work in
    entry-touch time, and the adaptive stage reads residual magnitudes off
    a JL sketch that all machines build from the shared seed.  Ledger
    phases and their closed forms match the exact protocol's, so the same
    double-entry check runs at the end.
    """
    from .column_partition import CssPcaResult

    if cluster.kind != "column":
        raise InputError("this protocol needs a column partition")
    k = params.k
    if k >= cluster.m:
        raise InputError("target rank must be below the row count")
    s, m, n = cluster.s, cluster.m, cluster.n
    ell, c1, c2, xi = params.resolve(n)
    flags: set[str] = set()
    parts = [_as_sparse(cluster.parts[i]) for i in range(s)]

    # stage 1: local selection with sketched kernels, verbatim uploads
    def pick_local(i, _):
        Ai = parts[i]
        if Ai.n_cols <= ell:
            if Ai.n_cols <= k:
                flags.add("local-tiny")
            return np.arange(Ai.n_cols, dtype=np.int64)
        Z = sparse_svd_boosting(
            Ai, k, 1.0 / 3.0, params.delta / s,
            derive_seed(derive_seed(params.seed, TAG_FAST_LOCAL_SVD), i))
        S = bss_sampling_sparse(
            Z, ResidualOperator(Ai, Z), ell, 0.5, params.delta / s,
            derive_seed(derive_seed(params.seed, TAG_FAST_LOCAL_BSS), i))
        return S.indices

    local_idx = cluster.map_machines(pick_local)
    local_sparse = [parts[i].take_columns(idx) for i, idx in enumerate(local_idx)]
    local_blocks = [b.to_dense() for b in local_sparse]
    cluster.record_gather("local-up", [b.upload_words() for b in local_sparse])
    G = _hstack_sparse(local_sparse, m)
    gids = np.concatenate([cluster.col_offsets[i] + idx
                           for i, idx in enumerate(local_idx)])

    # stage 2: global core selection
    if G.n_cols <= c1:
        flags.add("core-all")
        core_pos = np.arange(G.n_cols, dtype=np.int64)
        C_sparse = G
    else:
        core = deterministic_css_sparse(
            G, k, c1, derive_seed(params.seed, TAG_FAST_CORE))
        core_pos = core.indices
        C_sparse = G.take_columns(core_pos)
    C = C_sparse.to_dense()
    core_gids = [int(g) for g in gids[core_pos]]
    cluster.record_broadcast("global-down", C_sparse.upload_words())

    # stage 3: adaptive sampling from JL-sketched residual magnitudes
    J = jlt_sketch(n, m, derive_seed(params.seed, TAG_FAST_JLT))
    Jmat = J.materialize()
    Yc = orthonormal_basis(C)
    JY = Jmat @ Yc
    col_masses = []
    r2s = []
    for i in range(s):
        JA = dense_times_sparse(Jmat, parts[i])
        coeff = dense_times_sparse(Yc.T, parts[i])
        sketched = JA - JY @ coeff
        mass = np.sum(sketched * sketched, axis=0)
        col_masses.append(mass)
        r2s.append(float(mass.sum()))
    betas = [residual_beta(r2) for r2 in r2s]
    cluster.record_gather("adaptive-meta", 1)

    adaptive_gids: list[int] = []
    adaptive_sparse: list[SparseColMatrix] = []
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
            block = parts[i].take_columns(idx)
            adaptive_sparse.append(block)
            adaptive_gids.extend(int(cluster.col_offsets[i] + j) for j in idx)
            up_words.append(block.upload_words())
        cluster.record_gather("adaptive", up_words)
    new_cols = (np.hstack([b.to_dense() for b in adaptive_sparse])
                if adaptive_sparse else np.zeros((m, 0)))
    cluster.record_broadcast(
        "span-down",
        sum(b.upload_words() for b in adaptive_sparse) if adaptive_sparse else 0)
    C_full = np.hstack([C, new_cols])

    # stage 4: entry-touch subspace finalize with a shared embedding
    emb = sparse_embedding(xi, n, derive_seed(params.seed, TAG_CSS_SUBSPACE))
    c_actual = C_full.shape[1]

    def sketch_block(i, _):
        AW = embed_cols(emb, parts[i], col_base=cluster.col_offsets[i])
        return C_full.T @ AW

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
        replicas = cluster.map_machines(lambda i, p: Y @ truncated_svd(Xi, kk).U)
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
