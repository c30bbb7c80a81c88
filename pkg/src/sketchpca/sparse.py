"""Column-sparse matrix storage with per-column nonzero accounting.

The distributed column-partition protocols charge communication per column
as 2 * nnz + 1 words (index, value pairs plus a length header), so the
container keeps exact per-column nonzero counts and supports verbatim column
extraction with repeats.  Arithmetic should go through ``to_dense``; this
class is storage and bookkeeping, not a BLAS replacement.

Invariants enforced at construction: row indices strictly increasing within
each column, stored values nonzero and finite, indices in range.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


class SparseColMatrix:
    """CSC-style column-sparse matrix over float64."""

    __slots__ = ("n_rows", "n_cols", "indptr", "indices", "data")

    def __init__(self, shape, indptr, indices, data, *, validate: bool = True):
        self.n_rows, self.n_cols = int(shape[0]), int(shape[1])
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        if validate:
            self._validate()

    def _validate(self) -> None:
        if self.n_rows < 0 or self.n_cols < 0:
            raise InputError("shape must be nonnegative")
        if self.indptr.shape != (self.n_cols + 1,):
            raise InputError("indptr must have n_cols + 1 entries")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise InputError("indptr must start at 0 and be nondecreasing")
        if self.indptr[-1] != self.indices.shape[0] or self.indices.shape != self.data.shape:
            raise InputError("indices/data length disagrees with indptr")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.n_rows:
                raise InputError("row index out of range")
            if not np.all(np.isfinite(self.data)):
                raise InputError("stored values must be finite")
            if np.any(self.data == 0.0):
                raise InputError("stored values must be nonzero")
        for j in range(self.n_cols):
            seg = self.indices[self.indptr[j]:self.indptr[j + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise InputError(f"row indices in column {j} not strictly increasing")

    # -- constructors ---------------------------------------------------

    @classmethod
    def from_dense(cls, A) -> "SparseColMatrix":
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise InputError("from_dense needs a 2-D array")
        indptr = [0]
        indices: list[np.ndarray] = []
        data: list[np.ndarray] = []
        for j in range(A.shape[1]):
            rows = np.nonzero(A[:, j])[0]
            indices.append(rows)
            data.append(A[rows, j])
            indptr.append(indptr[-1] + rows.size)
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0)
        return cls(A.shape, np.asarray(indptr), cat(indices).astype(np.int64) if indices else np.zeros(0, np.int64), cat(data))

    @classmethod
    def from_columns(cls, shape, cols) -> "SparseColMatrix":
        """Build from a list of (row_indices, values) pairs, one per column."""
        if len(cols) != shape[1]:
            raise InputError("need exactly one (rows, values) pair per column")
        indptr = [0]
        rows_parts, data_parts = [], []
        for rows, vals in cols:
            rows = np.asarray(rows, dtype=np.int64)
            vals = np.asarray(vals, dtype=np.float64)
            if rows.shape != vals.shape:
                raise InputError("rows and values must have equal length")
            rows_parts.append(rows)
            data_parts.append(vals)
            indptr.append(indptr[-1] + rows.size)
        indices = np.concatenate(rows_parts) if rows_parts else np.zeros(0, np.int64)
        data = np.concatenate(data_parts) if data_parts else np.zeros(0)
        return cls(shape, np.asarray(indptr), indices, data)

    # -- queries --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def col(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= j < self.n_cols:
            raise InputError(f"column {j} out of range")
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def col_nnz(self, j: int | None = None):
        if j is None:
            return np.diff(self.indptr)
        if not 0 <= j < self.n_cols:
            raise InputError(f"column {j} out of range")
        return int(self.indptr[j + 1] - self.indptr[j])

    @property
    def max_col_nnz(self) -> int:
        if self.n_cols == 0:
            return 0
        return int(np.diff(self.indptr).max())

    def col_sqnorms(self) -> np.ndarray:
        out = np.zeros(self.n_cols)
        sq = self.data ** 2
        for j in range(self.n_cols):
            out[j] = sq[self.indptr[j]:self.indptr[j + 1]].sum()
        return out

    def frob_sq(self) -> float:
        return float(np.sum(self.data ** 2))

    # -- conversions ----------------------------------------------------

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.n_rows, self.n_cols))
        for j in range(self.n_cols):
            rows, vals = self.col(j)
            A[rows, j] = vals
        return A

    def take_columns(self, idx) -> "SparseColMatrix":
        """Extract columns verbatim, preserving repeats and order."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_cols):
            raise InputError("column index out of range")
        cols = [self.col(int(j)) for j in idx]
        return SparseColMatrix.from_columns((self.n_rows, idx.size), cols)

    def upload_words(self, idx=None) -> int:
        """Words to ship columns as (length, then index-value pairs): 2*nnz + 1 each."""
        counts = np.diff(self.indptr) if idx is None else np.asarray(
            [self.col_nnz(int(j)) for j in np.asarray(idx, dtype=np.int64)], dtype=np.int64)
        return int(np.sum(2 * counts + 1))

    def __repr__(self) -> str:
        return f"SparseColMatrix(shape=({self.n_rows}, {self.n_cols}), nnz={self.nnz})"
