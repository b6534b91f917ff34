"""Triplet assembly, canonical compressed storage and direct solves.

The sparse path is SciPy's SuperLU. ``dense_oracle_solve`` is an independent
LU with partial pivoting kept for cross-checking small systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

RESIDUAL_TOL = 1e-8


class LinearSolveError(RuntimeError):
    pass


class SingularMatrix(LinearSolveError):
    """Zero or tiny pivot during factorization."""


@dataclass
class TripletBuffer:
    n_rows: int
    n_cols: int
    _rows: list = field(default_factory=list)
    _cols: list = field(default_factory=list)
    _vals: list = field(default_factory=list)

    def add(self, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols and vals must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= self.n_rows
                          or cols.min() < 0 or cols.max() >= self.n_cols):
            raise IndexError("triplet index out of range")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)

    def arrays(self):
        if not self._rows:
            e = np.zeros(0, dtype=np.int64)
            return e, e.copy(), np.zeros(0)
        return np.concatenate(self._rows), np.concatenate(self._cols), np.concatenate(self._vals)

    def __len__(self):
        return sum(len(r) for r in self._rows)


@dataclass(frozen=True)
class CompressedMatrix:
    matrix: sp.csr_matrix
    symmetric: bool = False

    def __post_init__(self):
        if self.symmetric:
            A = self.matrix
            scale = abs(A).max() if A.nnz else 0.0
            asym = abs(A - A.T).max() if A.nnz else 0.0
            if asym > 1e-12 * scale:
                raise ValueError(f"matrix flagged symmetric but max|A-A^T| = {asym:g}")

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x

    def toarray(self):
        return self.matrix.toarray()


def compress(buf: TripletBuffer, symmetric: bool = False) -> CompressedMatrix:
    """Sum duplicates in a permutation-independent order and build CSR.

    Triplets are sorted by (row, col, value) before summation, so any
    reordering of the buffer yields bit-identical output.
    """
    rows, cols, vals = buf.arrays()
    order = np.lexsort((vals, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size:
        key = rows * buf.n_cols + cols
        start = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        vals = np.add.reduceat(vals, start)
        rows, cols = rows[start], cols[start]
    indptr = np.zeros(buf.n_rows + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    A = sp.csr_matrix((vals, cols, indptr), shape=(buf.n_rows, buf.n_cols))
    A.has_sorted_indices = True
    return CompressedMatrix(A, symmetric)


def from_dense(a, symmetric: bool = False) -> CompressedMatrix:
    a = np.asarray(a, dtype=float)
    r, c = np.nonzero(a)
    buf = TripletBuffer(*a.shape)
    buf.add(r, c, a[r, c])
    return compress(buf, symmetric)


@dataclass(frozen=True)
class SolveReport:
    residual_norm: float
    status: str = "ok"
    refinements: int = 0


def _residual(A, x, b):
    r = A @ x - b
    bn = max(np.linalg.norm(b), 1.0)
    return np.linalg.norm(r) / bn


class Factorization:
    """SuperLU factors of a square matrix, reusable for many right-hand sides.

    The matrix is scaled symmetrically by ``1/sqrt|a_ii|`` (row max where the
    diagonal vanishes) before factoring. With penalized rows many orders of
    magnitude larger than the rest, this lets a relaxed diagonal pivot
    threshold keep fill near that of the unpivoted ordering.
    """

    PIVOT_THRESHOLD = 0.1

    def __init__(self, A: CompressedMatrix):
        self.A = A.matrix.tocsc()
        n, m = self.A.shape
        if n != m:
            raise ValueError("matrix must be square")
        d = np.abs(self.A.diagonal())
        rowmax = np.asarray(abs(self.A).max(axis=1).todense()).ravel() if n else d
        d = np.where(d > 0, d, rowmax)
        if n and np.any(d == 0):
            raise SingularMatrix("matrix has an empty row")
        self._s = 1.0 / np.sqrt(d)
        S = sp.diags(self._s)
        try:
            self._lu = spla.splu((S @ self.A @ S).tocsc(), permc_spec="COLAMD",
                                 diag_pivot_thresh=self.PIVOT_THRESHOLD)
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc
        diag = np.abs(self._lu.U.diagonal())
        if diag.size and (not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * diag.max()):
            raise SingularMatrix(f"tiny pivot {diag.min():.3e} (max {diag.max():.3e})")

    def _apply(self, b):
        s = self._s.reshape(-1, *([1] * (b.ndim - 1)))
        return s * self._lu.solve(s * b)

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x = self._apply(b)
        cols = b.reshape(b.shape[0], -1)
        X = x.reshape(x.shape[0], -1)
        res = [_residual(self.A, X[:, k], cols[:, k]) for k in range(cols.shape[1])]
        steps = 0
        # a couple of refinement sweeps absorb the 1/h^3 penalty scaling
        while max(res, default=0.0) > RESIDUAL_TOL and steps < 3:
            X = X + self._apply(cols - self.A @ X)
            res = [_residual(self.A, X[:, k], cols[:, k]) for k in range(cols.shape[1])]
            steps += 1
        worst = max(res, default=0.0)
        if not np.isfinite(worst) or worst > RESIDUAL_TOL:
            raise LinearSolveError(f"residual {worst:.3e} exceeds {RESIDUAL_TOL:g}")
        return X.reshape(x.shape), SolveReport(worst, "ok", steps)


def solve_direct(A: CompressedMatrix, b):
    """Solve ``A x = b``; returns ``(x, SolveReport)``."""
    return Factorization(A).solve(b)


def dense_oracle_solve(A, b):
    """Gaussian elimination with partial pivoting on a dense copy."""
    a = np.array(A.toarray() if hasattr(A, "toarray") else A, dtype=float)
    b = np.asarray(b, dtype=float)
    x = b.reshape(b.shape[0], -1).copy()
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    scale = np.abs(a).max() if n else 0.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) <= 1e-14 * scale:
            raise SingularMatrix(f"zero pivot in column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            x[[k, p]] = x[[p, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
        x[k + 1:] -= np.outer(a[k + 1:, k], x[k])
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x.reshape(b.shape)


def constrain(A: CompressedMatrix, b, dofs, values):
    """Impose ``x[dofs] = values`` by symmetric elimination.

    Rows and columns of ``dofs`` become identity rows; the known values are
    moved to the right-hand side of the remaining equations.
    """
    M = A.matrix
    n = M.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    g = np.zeros(n)
    g[dofs] = values
    rhs = np.asarray(b, dtype=float) - M @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    M2 = (K @ M @ K + sp.diags(1.0 - keep)).tocsr()
    M2.eliminate_zeros()
    M2.sort_indices()
    rhs[dofs] = values
    return CompressedMatrix(M2, A.symmetric), rhs


def write_matrix_market(A: CompressedMatrix, path):
    from scipy.io import mmwrite

    mmwrite(str(path), A.matrix)
