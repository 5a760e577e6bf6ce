"""Compressed-row sparse matrices, preconditioned CG, Dirichlet elimination.

Storage and matrix-vector products delegate to scipy's CSR kernels; the
conjugate-gradient loop and the symmetric constraint elimination are local so
their convergence semantics and determinism stay under our control.
"""

from __future__ import annotations

from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SparseMatrix",
    "TripletPattern",
    "CGResult",
    "cg_solve",
    "apply_dirichlet",
]


class SparseMatrix:
    """Immutable CSR matrix built from (row, col, value) triplets.

    Duplicate triplets are summed and entries that are exactly zero after
    summation are dropped.  Column indices are strictly increasing within
    each row and the offset array is monotone.
    """

    __slots__ = ("_csr",)

    def __init__(self, csr):
        csr = sp.csr_matrix(csr)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        for arr in (csr.data, csr.indices, csr.indptr):
            arr.flags.writeable = False
        self._csr = csr

    # -- construction --------------------------------------------------
    @classmethod
    def from_triplets(
        cls, n: int, triplets: Iterable[tuple[int, int, float]]
    ) -> "SparseMatrix":
        """Assemble an n-by-n matrix from a triplet list."""
        items = list(triplets)
        if items:
            rows, cols, vals = (np.asarray(x) for x in zip(*items))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        return cls.from_arrays(n, n, rows, cols, vals)

    @classmethod
    def from_arrays(
        cls,
        n_rows: int,
        n_cols: int,
        rows: np.ndarray,
        cols: np.ndarray,
        values: np.ndarray,
    ) -> "SparseMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise IndexError("triplet row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise IndexError("triplet column index out of range")
        coo = sp.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols))
        return cls(coo.tocsr())

    # -- shape and storage ----------------------------------------------
    @property
    def n_rows(self) -> int:
        return self._csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self._csr.shape[1]

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    # -- algebra ---------------------------------------------------------
    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ np.asarray(x, dtype=np.float64)

    __matmul__ = matvec

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix(self._csr + other._csr)

    def scaled(self, alpha: float) -> "SparseMatrix":
        return SparseMatrix(self._csr * float(alpha))

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        diff = self._csr - self._csr.T
        if diff.nnz == 0:
            return True
        scale = float(np.abs(self._csr.data).max()) if self._csr.nnz else 1.0
        return float(np.abs(diff.data).max()) <= rtol * max(scale, 1.0)


class TripletPattern:
    """Frozen sparsity pattern for repeated assembly with varying values.

    Element-loop assembly produces the same (row, col) triplet list every
    time only the coefficients change, so the sort-and-merge work of the
    triplet-to-CSR conversion can be done once.  ``assemble(values)`` then
    reduces straight into CSR data arrays.
    """

    __slots__ = ("shape", "_perm", "_starts", "_indices", "_indptr")

    def __init__(self, n_rows: int, n_cols: int, rows: np.ndarray, cols: np.ndarray):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise IndexError("triplet row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cols):
            raise IndexError("triplet column index out of range")
        self.shape = (n_rows, n_cols)
        self._perm = np.lexsort((cols, rows))
        r = rows[self._perm]
        c = cols[self._perm]
        first = np.ones(r.size, dtype=bool)
        if r.size:
            first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        self._starts = np.where(first)[0]
        self._indices = c[self._starts]
        counts = np.bincount(r[self._starts], minlength=n_rows)
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        self._indptr = indptr

    def assemble(self, values: np.ndarray) -> "SparseMatrix":
        data = np.add.reduceat(
            np.asarray(values, dtype=np.float64).ravel()[self._perm], self._starts
        ) if self._starts.size else np.zeros(0)
        csr = sp.csr_matrix(
            (data, self._indices.copy(), self._indptr.copy()), shape=self.shape
        )
        return SparseMatrix(csr)


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float


def cg_solve(
    A: SparseMatrix,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> CGResult:
    """Jacobi-preconditioned conjugate gradients for SPD systems.

    Terminates when the 2-norm of the residual drops to ``tol * ||b||``.
    Deterministic for fixed input.  Non-convergence within ``max_iter`` is
    reported through the result, not raised; a zero diagonal entry is an
    error because the preconditioner requires the full diagonal.
    """
    if A.n_rows != A.n_cols:
        raise ValueError("cg_solve requires a square matrix")
    b = np.asarray(b, dtype=np.float64)
    n = A.n_rows
    if b.shape != (n,):
        raise ValueError("right-hand side length mismatch")
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise ValueError("zero diagonal entry: Jacobi preconditioner undefined")
    if max_iter is None:
        max_iter = 10 * n

    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return CGResult(np.zeros(n), 0, True, 0.0)
    target = tol * norm_b

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - (A @ x) if x.any() else b.copy()
    res = float(np.linalg.norm(r))
    if res <= target:
        return CGResult(x, 0, True, res)
    inv_diag = 1.0 / diag
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    iterations = 0
    scratch = np.empty(n)  # reused buffer keeps the loop allocation-free
    while iterations < max_iter:
        iterations += 1
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        np.multiply(p, alpha, out=scratch)
        x += scratch
        np.multiply(Ap, alpha, out=scratch)
        r -= scratch
        res = float(np.linalg.norm(r))
        if res <= target:
            return CGResult(x, iterations, True, res)
        np.multiply(inv_diag, r, out=z)
        rz_next = float(r @ z)
        np.multiply(p, rz_next / rz, out=p)
        p += z
        rz = rz_next
    return CGResult(x, iterations, False, res)


def apply_dirichlet(
    A: SparseMatrix,
    b: np.ndarray,
    constrained: Mapping[int, float],
) -> tuple[SparseMatrix, np.ndarray]:
    """Symmetric elimination of Dirichlet constraints.

    The constraint extension g (zero on free dofs) is moved to the right
    hand side, constrained rows and columns are zeroed with a unit diagonal,
    and ``b[i]`` is replaced by the prescribed value.  Symmetry and positive
    definiteness on the free dofs are preserved, which is what the CG solver
    requires.
    """
    b = np.asarray(b, dtype=np.float64)
    if not constrained:
        return A, b.copy()
    n = A.n_rows
    idx = np.fromiter(constrained.keys(), dtype=np.int64)
    vals = np.fromiter((constrained[int(i)] for i in idx), dtype=np.float64)
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError("constrained dof out of range")

    g = np.zeros(n)
    g[idx] = vals
    b2 = b - (A @ g)
    b2[idx] = vals

    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    csr = A._csr
    data = csr.data.copy()
    row_mask = np.repeat(mask, np.diff(csr.indptr))
    data[row_mask] = 0.0
    data[mask[csr.indices]] = 0.0
    stripped = sp.csr_matrix((data, csr.indices.copy(), csr.indptr.copy()), shape=csr.shape)
    eye = sp.diags(mask.astype(np.float64), format="csr")
    return SparseMatrix(stripped + eye), b2
