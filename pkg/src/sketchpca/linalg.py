"""Dense numerical kernels with deterministic conventions.

Thin wrappers around ``numpy.linalg`` that pin down everything the protocols
rely on for reproducibility: a fixed sign convention for singular vectors, QR
with a nonnegative R diagonal, explicit numeric-rank tolerances, restricted
rank-k projections onto a given column or row span, and the rank-constrained
affine solver used by every "sketch then solve small" step.

All public routines accept and return float64 arrays.  Empty dimensions are
legal everywhere; a 0-column factor is the canonical degenerate basis.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InputError

# Relative spectral cutoff for numeric rank, scaled by max(shape).
DEFAULT_RANK_TOL = 1e-10

# Orthonormality / reconstruction slack for factor validation.
FACTOR_CHECK_TOL = 1e-8


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array, copying only when needed."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


def _rank_cutoff(sigma: np.ndarray, shape: tuple[int, int], tol: float | None) -> float:
    if tol is None:
        tol = DEFAULT_RANK_TOL * max(shape) if max(shape, default=0) else DEFAULT_RANK_TOL
    top = sigma[0] if sigma.size else 0.0
    return tol * top


class SvdFactors(NamedTuple):
    """Compact SVD triple ``A ~ U @ diag(sigma) @ V.T`` with sign convention.

    Each left singular vector is flipped so that its largest-magnitude entry
    is positive (ties broken by the lowest row index), which makes the
    factorization a pure function of the input bits whenever the singular
    values are distinct.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T

    def check(self, A: np.ndarray | None = None, tol: float = FACTOR_CHECK_TOL) -> None:
        """Validate orthonormality and, when A is given, the reconstruction."""
        from .errors import InternalError

        k = self.sigma.shape[0]
        if self.U.shape[1] != k or self.V.shape[1] != k:
            raise InternalError("factor shapes disagree with sigma length")
        if k:
            gu = self.U.T @ self.U - np.eye(k)
            gv = self.V.T @ self.V - np.eye(k)
            if max(np.abs(gu).max(), np.abs(gv).max()) > tol:
                raise InternalError("singular vector blocks are not orthonormal")
            if np.any(np.diff(self.sigma) > tol) or np.any(self.sigma < -tol):
                raise InternalError("singular values not sorted nonnegative")
        if A is not None:
            scale = max(1.0, float(np.abs(A).max()) if A.size else 1.0)
            err = np.abs(self.reconstruct() - A).max() if A.size else 0.0
            if err > tol * scale * max(A.shape, default=1):
                raise InternalError("factorization does not reconstruct the input")


def _apply_sign_convention(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if U.shape[1] == 0:
        return U, V
    pick = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[pick, np.arange(U.shape[1])] < 0.0, -1.0, 1.0)
    return U * signs, V * signs


def svd(A) -> SvdFactors:
    """Compact SVD with the package sign convention."""
    A = as_matrix(A)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    U, V = _apply_sign_convention(U, Vt.T)
    return SvdFactors(U, s, V)


def truncated_svd(A, k: int) -> SvdFactors:
    """Top-k factors of the compact SVD.

    k may not exceed min(shape); k = 0 yields empty factors.  When the input
    has numeric rank below k the trailing factors correspond to (near-)zero
    singular values but k columns are still returned.
    """
    A = as_matrix(A)
    if not 0 <= k <= min(A.shape):
        raise InputError(f"rank target k={k} out of range for shape {A.shape}")
    F = svd(A)
    return SvdFactors(F.U[:, :k], F.sigma[:k], F.V[:, :k])


def tail_sq(A, k: int) -> float:
    """Squared Frobenius distance to the best rank-k approximation."""
    A = as_matrix(A)
    if not 0 <= k <= min(A.shape):
        raise InputError(f"rank target k={k} out of range for shape {A.shape}")
    s = np.linalg.svd(A, compute_uv=False)
    return float(np.sum(s[k:] ** 2))


def numeric_rank(A, tol: float | None = None) -> int:
    """Number of singular values above tol * sigma_max (tol scaled by shape)."""
    A = as_matrix(A)
    if min(A.shape) == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > _rank_cutoff(s, A.shape, tol)))


def pinv(A, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse with the same rank cutoff as numeric_rank."""
    A = as_matrix(A)
    if min(A.shape) == 0:
        return np.zeros((A.shape[1], A.shape[0]))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cut = _rank_cutoff(s, A.shape, tol)
    r = int(np.sum(s > cut))
    return (Vt[:r].T / s[:r]) @ U[:, :r].T


def qr(A) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with every diagonal entry of R nonnegative.

    Requires at least as many rows as columns.
    """
    A = as_matrix(A)
    if A.shape[0] < A.shape[1]:
        raise InputError(f"qr needs n_rows >= n_cols, got shape {A.shape}")
    Q, R = np.linalg.qr(A)
    if R.shape[0]:
        d = np.sign(np.diag(R))
        d[d == 0.0] = 1.0
        Q = Q * d
        R = R * d[:, None]
    return Q, R


def orthonormal_basis(A, tol: float | None = None) -> np.ndarray:
    """Orthonormal basis for the column space, rank-revealing via SVD."""
    A = as_matrix(A)
    if min(A.shape) == 0:
        return np.zeros((A.shape[0], 0))
    F = svd(A)
    cut = _rank_cutoff(F.sigma, A.shape, tol)
    r = int(np.sum(F.sigma > cut))
    return F.U[:, :r]


def finalize_basis(X) -> tuple[np.ndarray, int, bool]:
    """Orthonormalize the columns of X, detecting rank deficiency.

    Full column rank uses QR (the fast common path).  Otherwise the SVD left
    factor gives k deterministic orthonormal columns whose leading ones span
    the achieved column space; callers decide whether to trim.  Returns
    (basis with k columns, achieved rank, deficient flag).
    """
    X = as_matrix(X)
    k = X.shape[1]
    r = numeric_rank(X)
    if r == k and X.shape[0] >= k:
        Q, _ = qr(X)
        return Q, k, False
    F = svd(X)
    return F.U[:, :k], r, True


def round_to_multiple(A, rho: float) -> np.ndarray:
    """Round every entry to the nearest multiple of rho; rho = 0 disables."""
    A = as_matrix(A)
    if rho < 0:
        raise InputError(f"rounding granularity must be nonnegative, got {rho}")
    if rho == 0.0:
        return A
    return rho * np.round(A / rho)


class SpanProjection(NamedTuple):
    """Pieces of the best rank-k approximation restricted to a given span.

    basis:    orthonormal columns spanning the candidate space
    coeffs:   basis.T @ A (or A @ basis for row spans)
    top:      top-k left singular vectors of coeffs
    """

    basis: np.ndarray
    coeffs: np.ndarray
    top: np.ndarray

    def matrix_colspan(self) -> np.ndarray:
        return self.basis @ (self.top @ (self.top.T @ self.coeffs))

    def matrix_rowspan(self) -> np.ndarray:
        # coeffs here is A @ basis, with top the top right factor of coeffs
        return (self.coeffs @ self.top) @ self.top.T @ self.basis.T


def best_rank_k_in_colspan(A, V, k: int) -> SpanProjection:
    """Best rank-k approximation of A among matrices with columns in span(V).

    Let Y be an orthonormal basis of span(V) and Delta the top-k left
    singular vectors of Y.T @ A.  Then Y @ Delta @ Delta.T @ Y.T @ A attains
    the minimum Frobenius error over rank-k matrices in the span, exactly.
    """
    A = as_matrix(A, "A")
    V = as_matrix(V, "V")
    if V.shape[0] != A.shape[0]:
        raise InputError("V must have the same number of rows as A")
    if k < 0:
        raise InputError("k must be nonnegative")
    Y = orthonormal_basis(V)
    P = Y.T @ A
    kk = min(k, min(P.shape))
    Delta = truncated_svd(P, kk).U
    return SpanProjection(Y, P, Delta)


def best_rank_k_in_rowspan(A, R, k: int) -> SpanProjection:
    """Row-space twin of best_rank_k_in_colspan; R supplies candidate rows."""
    A = as_matrix(A, "A")
    R = as_matrix(R, "R")
    if R.shape[1] != A.shape[1]:
        raise InputError("R must have the same number of columns as A")
    if k < 0:
        raise InputError("k must be nonnegative")
    Y = orthonormal_basis(R.T)
    P = A @ Y
    kk = min(k, min(P.shape))
    Delta = truncated_svd(P.T, kk).U
    return SpanProjection(Y, P, Delta)


def colspan_residual_sq(A, V, k: int) -> float:
    """Squared error of the rank-k-restricted projection onto span(V)."""
    A = as_matrix(A, "A")
    proj = best_rank_k_in_colspan(A, V, k)
    return float(np.linalg.norm(A - proj.matrix_colspan(), "fro") ** 2)


def span_residual_sq(A, V) -> float:
    """Squared error of the plain orthogonal projection onto span(V)."""
    A = as_matrix(A, "A")
    Y = orthonormal_basis(as_matrix(V, "V"))
    return float(np.linalg.norm(A - Y @ (Y.T @ A), "fro") ** 2)


def residual_ratio(A, U, k: int) -> float:
    """||A - U U^T A||_F^2 relative to the optimal rank-k tail.

    U must have orthonormal columns.  A zero tail with a zero residual
    reports 1.0; a zero tail with positive residual reports +inf.
    """
    A = as_matrix(A, "A")
    U = as_matrix(U, "U")
    res = float(np.linalg.norm(A - U @ (U.T @ A), "fro") ** 2)
    opt = tail_sq(A, k)
    total = max(1.0, float(np.sum(A * A)))
    if opt <= 1e-22 * total:
        return 1.0 if res <= 1e-18 * total else float("inf")
    return res / opt


def rank_constrained_affine_solve(M, N, L, k: int) -> np.ndarray:
    """Minimize ||M - N @ X @ L||_F over rank(X) <= k, returning the
    minimum-Frobenius-norm minimizer.

    With compact SVDs N = Un Sn Vn^T and L = Ul Sl Vl^T, the optimum is
    X = Vn Sn^{-1} B_k Sl^{-1} Ul^T where B_k is the best rank-k
    approximation of Un^T M Vl.  Rank deficiency in N or L is handled by
    the pseudoinverse cutoff.
    """
    M = as_matrix(M, "M")
    N = as_matrix(N, "N")
    L = as_matrix(L, "L")
    if N.shape[0] != M.shape[0] or L.shape[1] != M.shape[1]:
        raise InputError("shapes not conformal: need M = N @ X @ L to typecheck")
    if k < 0:
        raise InputError("k must be nonnegative")

    Un, sn, Vnt = np.linalg.svd(N, full_matrices=False) if min(N.shape) else (
        np.zeros((N.shape[0], 0)), np.zeros(0), np.zeros((0, N.shape[1])))
    Ul, sl, Vlt = np.linalg.svd(L, full_matrices=False) if min(L.shape) else (
        np.zeros((L.shape[0], 0)), np.zeros(0), np.zeros((0, L.shape[1])))
    rn = int(np.sum(sn > _rank_cutoff(sn, N.shape, None)))
    rl = int(np.sum(sl > _rank_cutoff(sl, L.shape, None)))
    Un, sn, Vn = Un[:, :rn], sn[:rn], Vnt[:rn].T
    Ul, sl, Vl = Ul[:, :rl], sl[:rl], Vlt[:rl].T

    B = Un.T @ M @ Vl
    kk = min(k, min(B.shape))
    F = truncated_svd(B, kk)
    core = (F.U * F.sigma) @ F.V.T
    return (Vn / sn) @ core @ (Ul / sl).T if rn and rl else np.zeros((N.shape[1], L.shape[0]))
