"""Text formats: MatrixMarket matrices and turnstile stream files.

Dense matrices use ``matrix array real general`` (column-major body), sparse
ones ``matrix coordinate real general`` with 1-based indices.  Values are
written with 17 significant digits so that write-then-read reproduces the
exact float64 bits.

A stream file is a header line ``m n q`` followed by q update lines
``i j x`` with 1-based coordinates, in arrival order.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .sparse import SparseColMatrix

_FMT = "%.17g"


def _nonblank_lines(text: str):
    for raw in text.splitlines():
        line = raw.strip()
        if line and not line.startswith("%"):
            yield line


def write_matrix_market(path, A) -> None:
    """Write a dense ndarray or SparseColMatrix in MatrixMarket format."""
    if isinstance(A, SparseColMatrix):
        lines = ["%%MatrixMarket matrix coordinate real general",
                 f"{A.n_rows} {A.n_cols} {A.nnz}"]
        for j in range(A.n_cols):
            rows, vals = A.col(j)
            for i, v in zip(rows, vals):
                lines.append(f"{i + 1} {j + 1} {_FMT % v}")
    else:
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2:
            raise InputError("matrix must be 2-D")
        lines = ["%%MatrixMarket matrix array real general",
                 f"{A.shape[0]} {A.shape[1]}"]
        for j in range(A.shape[1]):
            for i in range(A.shape[0]):
                lines.append(_FMT % A[i, j])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix_market(path):
    """Read a MatrixMarket file; returns ndarray (array) or SparseColMatrix."""
    with open(path) as fh:
        text = fh.read()
    first = text.splitlines()[0].strip() if text.splitlines() else ""
    fields = first.lower().split()
    if len(fields) != 5 or fields[0] != "%%matrixmarket" or fields[1] != "matrix":
        raise InputError(f"{path}: not a MatrixMarket matrix file")
    kind, scalar, symmetry = fields[2], fields[3], fields[4]
    if scalar != "real" or symmetry != "general":
        raise InputError(f"{path}: only 'real general' matrices are supported")
    body = list(_nonblank_lines(text))
    if not body:
        raise InputError(f"{path}: missing size line")

    if kind == "array":
        dims = body[0].split()
        if len(dims) != 2:
            raise InputError(f"{path}: array size line must be 'm n'")
        m, n = int(dims[0]), int(dims[1])
        vals = body[1:]
        if len(vals) != m * n:
            raise InputError(f"{path}: expected {m * n} values, found {len(vals)}")
        A = np.array([float(v) for v in vals], dtype=np.float64)
        return A.reshape((n, m)).T if m * n else np.zeros((m, n))

    if kind == "coordinate":
        dims = body[0].split()
        if len(dims) != 3:
            raise InputError(f"{path}: coordinate size line must be 'm n nnz'")
        m, n, nnz = (int(d) for d in dims)
        entries = body[1:]
        if len(entries) != nnz:
            raise InputError(f"{path}: expected {nnz} entries, found {len(entries)}")
        per_col: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for line in entries:
            parts = line.split()
            if len(parts) != 3:
                raise InputError(f"{path}: bad coordinate line {line!r}")
            i, j, v = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
            if not (0 <= i < m and 0 <= j < n):
                raise InputError(f"{path}: index out of range in line {line!r}")
            if v != 0.0:
                per_col[j].append((i, v))
        cols = []
        for j in range(n):
            per_col[j].sort(key=lambda t: t[0])
            rows = [t[0] for t in per_col[j]]
            if len(set(rows)) != len(rows):
                raise InputError(f"{path}: duplicate entry in column {j + 1}")
            cols.append((rows, [t[1] for t in per_col[j]]))
        return SparseColMatrix.from_columns((m, n), cols)

    raise InputError(f"{path}: unsupported kind {kind!r}")


def write_stream_file(path, shape, updates) -> None:
    """Write turnstile updates (i, j, x) with 0-based coords to a stream file."""
    m, n = int(shape[0]), int(shape[1])
    lines = [f"{m} {n} {len(updates)}"]
    for i, j, x in updates:
        if not (0 <= i < m and 0 <= j < n):
            raise InputError(f"update index ({i}, {j}) out of range for {m} x {n}")
        lines.append(f"{i + 1} {j + 1} {_FMT % x}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_stream_file(path):
    """Read a stream file; returns ((m, n), list of 0-based (i, j, x))."""
    with open(path) as fh:
        body = list(_nonblank_lines(fh.read()))
    if not body:
        raise InputError(f"{path}: empty stream file")
    head = body[0].split()
    if len(head) != 3:
        raise InputError(f"{path}: header must be 'm n q'")
    m, n, q = (int(h) for h in head)
    if len(body) - 1 != q:
        raise InputError(f"{path}: expected {q} updates, found {len(body) - 1}")
    updates = []
    for line in body[1:]:
        parts = line.split()
        if len(parts) != 3:
            raise InputError(f"{path}: bad update line {line!r}")
        i, j = int(parts[0]) - 1, int(parts[1]) - 1
        if not (0 <= i < m and 0 <= j < n):
            raise InputError(f"{path}: update index out of range in {line!r}")
        updates.append((i, j, float(parts[2])))
    return (m, n), updates
