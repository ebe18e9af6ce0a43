"""Compressed sparse containers and conversions to and from dense arrays.

Dense matrices are plain ``numpy.ndarray`` objects of dtype float64; the
layout is carried by the array order flag (``C`` for row-major, ``F`` for
column-major).  Sparse matrices are the two compressed formats used by the
tree code: CSC at fit time (fast column access) and CSR at predict time
(fast row access).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import CapacityError, DuplicateEntry, ShapeError

#: Largest dense allocation (in bytes) that :func:`densify` will perform.
DENSIFY_BYTE_CAP = 2 * 1024**3

LAYOUTS = {"row-major": "C", "column-major": "F"}


def _check_compressed(indptr, indices, data, n_major, n_minor, name):
    if indptr.shape != (n_major + 1,):
        raise ShapeError(f"{name}: indptr must have length {n_major + 1}")
    if indices.shape != data.shape or indices.ndim != 1:
        raise ShapeError(f"{name}: indices and data must be 1-d of equal length")
    if indptr[0] != 0 or indptr[-1] != len(indices):
        raise ShapeError(f"{name}: indptr must start at 0 and end at nnz")
    if np.any(np.diff(indptr) < 0):
        raise ShapeError(f"{name}: indptr must be non-decreasing")
    if len(indices):
        if indices.min() < 0 or indices.max() >= n_minor:
            raise IndexError(f"{name}: index out of range")
        step = np.diff(indices)
        # positions k where k+1 opens a new slice are exempt from ordering
        new_slice = np.zeros(len(indices) - 1, dtype=bool)
        starts = indptr[1:-1]
        starts = starts[(starts > 0) & (starts < len(indices))]
        new_slice[starts - 1] = True
        if np.any((step <= 0) & ~new_slice):
            raise ValueError(f"{name}: indices must be strictly increasing per slice")
    if np.any(data == 0):
        raise ValueError(f"{name}: explicit zeros are not allowed")


@dataclass(frozen=True, eq=False)
class CscMatrix:
    """Compressed sparse column matrix with sorted, duplicate-free rows."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.ascontiguousarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float64))
        for arr in (self.indptr, self.indices, self.data):
            arr.setflags(write=False)
        _check_compressed(self.indptr, self.indices, self.data, self.n_cols, self.n_rows, "CSC")

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.data)

    def column(self, j):
        """Return ``(row_indices, values)`` of the stored entries of column ``j``."""
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.indices[lo:hi], self.data[lo:hi]


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix; the transpose layout of :class:`CscMatrix`."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.ascontiguousarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float64))
        for arr in (self.indptr, self.indices, self.data):
            arr.setflags(write=False)
        _check_compressed(self.indptr, self.indices, self.data, self.n_rows, self.n_cols, "CSR")

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.data)


def _compress(major, minor, values, n_major):
    """Sort COO entries by (major, minor) and build indptr."""
    order = np.lexsort((minor, major))
    major, minor, values = major[order], minor[order], values[order]
    indptr = np.zeros(n_major + 1, dtype=np.int64)
    np.cumsum(np.bincount(major, minlength=n_major), out=indptr[1:])
    return indptr, minor, values


def csc_from_triplets(triplets, n_rows, n_cols):
    """Build a canonical CSC matrix from ``(row, col, value)`` triplets.

    Exact zeros are dropped.  Raises ``IndexError`` on out-of-range
    coordinates and :class:`DuplicateEntry` on repeated ones.
    """
    if len(triplets):
        arr = np.asarray(triplets, dtype=object)
        rows = np.asarray(arr[:, 0], dtype=np.int64)
        cols = np.asarray(arr[:, 1], dtype=np.int64)
        vals = np.asarray(arr[:, 2], dtype=np.float64)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return _csc_from_coo(rows, cols, vals, n_rows, n_cols)


def _csc_from_coo(rows, cols, vals, n_rows, n_cols):
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if len(rows) and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError("triplet coordinate out of range")
    key = cols * max(n_rows, 1) + rows
    if len(np.unique(key)) != len(key):
        raise DuplicateEntry("duplicate (row, col) coordinate")
    keep = vals != 0
    indptr, indices, data = _compress(cols[keep], rows[keep], vals[keep], n_cols)
    return CscMatrix(n_rows, n_cols, indptr, indices, data)


def _expand_major(indptr):
    return np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))


def csc_to_csr(m: CscMatrix) -> CsrMatrix:
    cols = _expand_major(m.indptr)
    indptr, indices, data = _compress(m.indices, cols, m.data, m.n_rows)
    return CsrMatrix(m.n_rows, m.n_cols, indptr, indices, data)


def csr_to_csc(m: CsrMatrix) -> CscMatrix:
    rows = _expand_major(m.indptr)
    indptr, indices, data = _compress(m.indices, rows, m.data, m.n_cols)
    return CscMatrix(m.n_rows, m.n_cols, indptr, indices, data)


def densify(m, layout="row-major", max_bytes=None):
    """Materialize a sparse matrix as a dense float64 array in ``layout``."""
    cap = DENSIFY_BYTE_CAP if max_bytes is None else max_bytes
    if m.n_rows * m.n_cols * 8 > cap:
        raise CapacityError(f"dense {m.n_rows}x{m.n_cols} matrix exceeds {cap} bytes")
    out = np.zeros((m.n_rows, m.n_cols), order=LAYOUTS[layout])
    major = _expand_major(m.indptr)
    if isinstance(m, CscMatrix):
        out[m.indices, major] = m.data
    else:
        out[major, m.indices] = m.data
    return out


def sparsify(X, fmt="csc"):
    """Convert a dense 2-d array to CSC (default) or CSR."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("expected a 2-d array")
    if fmt == "csc":
        cols, rows = np.nonzero(X.T)
        return CscMatrix(X.shape[0], X.shape[1], *_compress(cols, rows, X[rows, cols], X.shape[1]))
    if fmt == "csr":
        rows, cols = np.nonzero(X)
        return CsrMatrix(X.shape[0], X.shape[1], *_compress(rows, cols, X[rows, cols], X.shape[0]))
    raise ValueError(f"unknown sparse format {fmt!r}")


def density(m) -> float:
    """Fraction of structurally non-zero entries."""
    size = m.shape[0] * m.shape[1]
    if size == 0:
        return 0.0
    if isinstance(m, (CscMatrix, CsrMatrix)):
        return m.nnz / size
    return float(np.count_nonzero(m)) / size


def take_rows(m, rows):
    """Row subset (repeats allowed) of a dense array, CSC or CSR matrix."""
    rows = np.asarray(rows, dtype=np.int64)
    if isinstance(m, np.ndarray):
        return m[rows]
    csr = csc_to_csr(m) if isinstance(m, CscMatrix) else m
    lo, hi = csr.indptr[rows], csr.indptr[rows + 1]
    counts = hi - lo
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    pos = np.repeat(lo - indptr[:-1], counts) + np.arange(indptr[-1])
    out = CsrMatrix(len(rows), csr.n_cols, indptr, csr.indices[pos], csr.data[pos])
    return csr_to_csc(out) if isinstance(m, CscMatrix) else out
