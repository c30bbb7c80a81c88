"""Seeded sketching matrices with counter-based entry generation.

Every sketch entry is a pure function of (seed, row, column), so two parties
holding the same seed materialize bitwise-identical matrices without
communicating anything else.  The generator is a two-round splitmix64
finalizer applied to seed xor mixed cell index; it is not cryptographic, just
well distributed and reproducible across platforms.

Families:

* sign sketches: dense +-scale entries, the workhorse for PCA and
  regression sketches and for rank-probe matrices (scale 1);
* subsampled randomized Hadamard (SRHT): used where affine-embedding
  accuracy per row matters, applied with a fast Walsh-Hadamard transform;
* sparse embeddings (one nonzero per column): input-sparsity-time maps;
* Johnson-Lindenstrauss maps for norm scoring of a bounded candidate set.

Sizing helpers give the default sketch dimensions; each takes a ``const``
override so callers can trade constants for accuracy.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64_np(z: np.ndarray) -> np.ndarray:
    """One splitmix64 finalization round, vectorized over uint64."""
    z = (z + np.uint64(_GOLDEN))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix64(x: int) -> int:
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, label) -> int:
    """Derive an independent child seed from a master seed and a label.

    String labels are hashed (stable across runs and platforms); integer
    labels are mixed directly.  Derivation is associative enough for our
    needs: derive(derive(s, "a"), 3) is the per-index child of child "a".
    """
    if isinstance(label, str):
        tag = int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "big")
    elif isinstance(label, (int, np.integer)):
        tag = _mix64(int(label) & _MASK64)
    else:
        raise InputError(f"seed label must be str or int, got {type(label).__name__}")
    return _mix64(_mix64(seed & _MASK64) ^ tag)


def prf_cells(seed: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """uint64 PRF value per (row, col) cell; inputs broadcast."""
    cell = (rows.astype(np.uint64) << np.uint64(32)) | cols.astype(np.uint64)
    return _mix64_np(np.uint64(seed & _MASK64) ^ _mix64_np(cell))


def _sign_grid(seed: int, n_rows: int, n_cols: int) -> np.ndarray:
    r = np.arange(n_rows, dtype=np.uint64)[:, None]
    c = np.arange(n_cols, dtype=np.uint64)[None, :]
    h = prf_cells(seed, r, c)
    return np.where(h >> np.uint64(63), -1.0, 1.0)


# -- sizing ------------------------------------------------------------


def dense_pca_dim(k: int, eps: float, const: float = 4.0) -> int:
    """Rows of a dense sign sketch for rank-k PCA at accuracy eps."""
    _check_size_args(k, eps)
    return max(1, math.ceil(const * k / eps**2))


def regression_dim(k: int, eps: float, const: float = 10.0) -> int:
    """Rows of a sign sketch good enough for sketched regression."""
    _check_size_args(k, eps)
    return max(1, math.ceil(const * k / eps))


def affine_dim(r: int, eps: float, const: float = 8.0) -> int:
    """Rows of an SRHT affine embedding for an r-dimensional subspace."""
    _check_size_args(r, eps)
    return max(1, math.ceil(const * r / eps**2))


def embedding_dim(k: int, eps: float, const: float = 2.0) -> int:
    """Rows of a sparse embedding (one nonzero per column) for rank k."""
    _check_size_args(k, eps)
    return max(1, math.ceil(const * k * k / eps**2))


def jlt_rows(n_points: int, beta: float = 1.0, const: float = 8.0) -> int:
    """Rows of a JL map preserving n_points squared norms to a fixed factor
    with failure probability n_points ** (-beta)."""
    if n_points < 1:
        raise InputError("n_points must be positive")
    return max(1, math.ceil((4.0 + 2.0 * beta) * const * math.log(max(n_points, 2))))


def _check_size_args(k: int, eps: float) -> None:
    if k < 0:
        raise InputError("k must be nonnegative")
    if not 0.0 < eps:
        raise InputError("eps must be positive")


def next_pow2(n: int) -> int:
    if n <= 1:
        return 1
    return 1 << (n - 1).bit_length()


# -- dense sign sketches ----------------------------------------------


@dataclass(frozen=True)
class SignSketch:
    """Dense sketch with entries +-scale, entry (i, j) = f(seed, i, j)."""

    n_rows: int
    n_cols: int
    seed: int
    scale: float

    def __post_init__(self):
        if self.n_rows < 0 or self.n_cols < 0:
            raise InputError("sketch dimensions must be nonnegative")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def materialize(self) -> np.ndarray:
        return _sign_grid(self.seed, self.n_rows, self.n_cols) * self.scale

    def materialize_cols(self, cols) -> np.ndarray:
        """Columns of the sketch by absolute index, without the rest."""
        cols = np.asarray(cols, dtype=np.uint64)[None, :]
        rows = np.arange(self.n_rows, dtype=np.uint64)[:, None]
        h = prf_cells(self.seed, rows, cols)
        return np.where(h >> np.uint64(63), -1.0, 1.0) * self.scale

    def apply_left(self, A: np.ndarray) -> np.ndarray:
        return self.materialize() @ A


def sign_sketch(xi: int, n: int, seed: int, scale: float | None = None) -> SignSketch:
    """Standard 1/sqrt(xi)-scaled sign sketch (pass scale=1.0 for probes)."""
    if scale is None:
        scale = 1.0 / math.sqrt(xi) if xi else 1.0
    return SignSketch(xi, n, seed, scale)


# -- subsampled randomized Hadamard -----------------------------------


def fwht_axis0(x: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along axis 0.

    Leading dimension must be a power of two.  Matches the Sylvester
    construction H_{2n} = [[H, H], [H, -H]] in natural index order.
    """
    n = x.shape[0]
    if n & (n - 1):
        raise InputError(f"FWHT length must be a power of two, got {n}")
    out = np.array(x, dtype=np.float64, copy=True)
    rest = out.shape[1:]
    h = 1
    while h < n:
        out = out.reshape(n // (2 * h), 2, h, *rest)
        a = out[:, 0].copy()
        b = out[:, 1].copy()
        out[:, 0] = a + b
        out[:, 1] = a - b
        out = out.reshape(n, *rest)
        h *= 2
    return out


@dataclass(frozen=True)
class SrhtSketch:
    """Subsampled randomized Hadamard transform R H D / sqrt(xi_eff).

    Inputs of length n_cols are sign-flipped (D), zero-padded to the next
    power of two, transformed, and xi_eff sampled rows are kept.  When the
    requested row count reaches the padded length every row is kept and the
    map is an exact isometry, which the capping rule exploits: xi_eff =
    min(xi_requested, padded length), since sampling is without replacement.
    """

    n_rows: int
    n_cols: int
    seed: int
    n_pad: int
    rows: np.ndarray = field(repr=False)
    signs: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def apply_left(self, A: np.ndarray) -> np.ndarray:
        A = np.asarray(A, dtype=np.float64)
        if A.shape[0] != self.n_cols:
            raise InputError("operand rows disagree with sketch width")
        z = np.zeros((self.n_pad,) + A.shape[1:])
        z[: self.n_cols] = self.signs.reshape((-1,) + (1,) * (A.ndim - 1)) * A
        F = fwht_axis0(z)
        return F[self.rows] / math.sqrt(self.n_rows)

    def materialize(self) -> np.ndarray:
        return self.apply_left(np.eye(self.n_cols))


def srht_sketch(xi: int, n: int, seed: int) -> SrhtSketch:
    if xi < 1 or n < 1:
        raise InputError("SRHT dimensions must be positive")
    n_pad = next_pow2(n)
    xi_eff = min(xi, n_pad)
    rng = np.random.default_rng(derive_seed(seed, "srht-rows") & _MASK64)
    rows = np.sort(rng.choice(n_pad, size=xi_eff, replace=False))
    sign_cells = prf_cells(derive_seed(seed, "srht-diag"),
                           np.zeros(n, dtype=np.uint64), np.arange(n, dtype=np.uint64))
    signs = np.where(sign_cells >> np.uint64(63), -1.0, 1.0)
    return SrhtSketch(xi_eff, n, seed, n_pad, rows, signs)


# -- sparse embeddings -------------------------------------------------


@dataclass(frozen=True)
class SparseEmbedding:
    """One nonzero (+-1) per column, bucket and sign drawn from the seed.

    Application accumulates contributions in ascending column order so the
    result is bitwise identical to the naive per-column loop; a blocked
    matmul is not equivalent under floating-point addition and is avoided
    on purpose.
    """

    n_rows: int
    n_cols: int
    seed: int
    buckets: np.ndarray = field(repr=False)
    signs: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def apply_left(self, A: np.ndarray) -> np.ndarray:
        A = np.asarray(A, dtype=np.float64)
        if A.shape[0] != self.n_cols:
            raise InputError("operand rows disagree with sketch width")
        out = np.zeros((self.n_rows,) + A.shape[1:])
        np.add.at(out, self.buckets, self.signs.reshape((-1,) + (1,) * (A.ndim - 1)) * A)
        return out

    def apply_right(self, A: np.ndarray) -> np.ndarray:
        """A @ S.T with the same canonical accumulation order."""
        return self.apply_left(np.asarray(A, dtype=np.float64).T).T

    def materialize(self) -> np.ndarray:
        S = np.zeros((self.n_rows, self.n_cols))
        S[self.buckets, np.arange(self.n_cols)] = self.signs
        return S


def sparse_embedding(xi: int, n: int, seed: int) -> SparseEmbedding:
    if xi < 1 or n < 0:
        raise InputError("embedding needs xi >= 1 and n >= 0")
    cols = np.arange(n, dtype=np.uint64)
    zero = np.zeros(n, dtype=np.uint64)
    buckets = prf_cells(derive_seed(seed, "embed-bucket"), zero, cols) % np.uint64(xi)
    sign_cells = prf_cells(derive_seed(seed, "embed-sign"), zero, cols)
    signs = np.where(sign_cells >> np.uint64(63), -1.0, 1.0)
    return SparseEmbedding(xi, n, seed, buckets.astype(np.int64), signs)


# -- Johnson-Lindenstrauss ---------------------------------------------


def jlt_sketch(n_points: int, n: int, seed: int, beta: float = 1.0,
               const: float = 8.0) -> SignSketch:
    """Sign JL map with rows chosen for n_points vectors at failure n^-beta."""
    r = jlt_rows(n_points, beta, const)
    return SignSketch(r, n, seed, 1.0 / math.sqrt(r))
