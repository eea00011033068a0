"""Sparse symmetric storage, Cholesky factorization, and a grid-bucket spatial index.

Matrices here are small enough (desk scale, a few thousand rows) that the
factor itself is held densely after a fill-reducing reverse Cuthill-McKee
permutation; sparsity is exploited for storage, assembly and neighborhood
queries, and all localized sub-problems are factored densely on purpose.
"""

import math
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg.lapack import dpotrf, dpotri, dpotrs
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import FactorizationError


class SparseSymmetric:
    """Symmetric n-by-n matrix stored as the lower triangle in CSR form.

    The stored pattern is explicit-zero-free and closed under transpose by
    construction.  Instances are immutable after construction.
    """

    def __init__(self, lower: sp.csr_matrix):
        lower = sp.csr_matrix(lower)
        lower.eliminate_zeros()
        lower.sum_duplicates()
        self._lower = lower
        self._full: Optional[sp.csr_matrix] = None

    # -- constructors ----------------------------------------------------

    @classmethod
    def from_entries(cls, order: int, rows, cols, vals) -> "SparseSymmetric":
        """Build from (row, col, value) triples of one triangle (any mix)."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        lo_r = np.maximum(rows, cols)
        lo_c = np.minimum(rows, cols)
        lower = sp.coo_matrix((vals, (lo_r, lo_c)), shape=(order, order)).tocsr()
        return cls(lower)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseSymmetric":
        dense = np.asarray(dense, dtype=float)
        if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
            raise ValueError("dense input must be square")
        return cls(sp.csr_matrix(np.tril(dense)))

    # -- views -----------------------------------------------------------

    @property
    def order(self) -> int:
        return self._lower.shape[0]

    @property
    def nnz_lower(self) -> int:
        return self._lower.nnz

    def full(self) -> sp.csr_matrix:
        """Full symmetric CSR view (cached)."""
        if self._full is None:
            strict = sp.tril(self._lower, k=-1)
            self._full = (self._lower + strict.T).tocsr()
        return self._full

    def to_dense(self) -> np.ndarray:
        return self.full().toarray()

    def lower_entries(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, values) of the stored lower triangle."""
        coo = self._lower.tocoo()
        return coo.row.copy(), coo.col.copy(), coo.data.copy()

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.full() @ np.asarray(v, dtype=float)

    def submatrix(self, idx: np.ndarray) -> np.ndarray:
        """Dense symmetric sub-matrix for the given sorted index list."""
        idx = np.asarray(idx, dtype=np.int64)
        return self.full()[np.ix_(idx, idx)].toarray()

    def max_row_nnz(self) -> int:
        full = self.full()
        if full.nnz == 0:
            return 0
        return int(np.diff(full.indptr).max())

    def density(self) -> float:
        n = self.order
        return self.full().nnz / (n * n) if n else 0.0


def _dense_lower(a: Union[SparseSymmetric, np.ndarray]) -> np.ndarray:
    if isinstance(a, SparseSymmetric):
        return a.to_dense()
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("matrix must be square")
    return 0.5 * (arr + arr.T)


class CholeskyFactor:
    """Lower Cholesky factor of a permuted SPD matrix.

    ``L @ L.T == A[perm][:, perm]``; solves undo the permutation, so callers
    see the original ordering throughout.
    """

    def __init__(self, lower: np.ndarray, perm: np.ndarray):
        self.lower = lower
        self.perm = perm
        self._inv_perm = np.argsort(perm)

    @property
    def order(self) -> int:
        return self.lower.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.order:
            raise ValueError(f"rhs length {rhs.shape[0]} != order {self.order}")
        x, info = dpotrs(self.lower, rhs[self.perm], lower=1)
        if info != 0:
            raise FactorizationError(int(info), "triangular solve failed")
        return x[self._inv_perm]

    def logdet(self) -> float:
        """log determinant of A (twice the log-diagonal sum of the factor)."""
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def reconstruct(self) -> np.ndarray:
        """A in the original ordering; used by tests."""
        a_perm = self.lower @ self.lower.T
        return a_perm[np.ix_(self._inv_perm, self._inv_perm)]

    def inverse(self) -> np.ndarray:
        """Dense inverse of A in the original ordering."""
        inv, info = dpotri(self.lower, lower=1)
        if info != 0:
            raise FactorizationError(int(info), "inversion from factor failed")
        inv = np.tril(inv) + np.tril(inv, -1).T
        return inv[np.ix_(self._inv_perm, self._inv_perm)]


def cholesky(a: Union[SparseSymmetric, np.ndarray]) -> CholeskyFactor:
    """Cholesky factorization with a fill-reducing ordering.

    Sparse inputs are permuted by reverse Cuthill-McKee before the dense
    LAPACK factorization; dense inputs are factored in natural order.
    Raises :class:`FactorizationError` naming the failing pivot (original
    indexing) when the matrix is not positive definite.
    """
    if isinstance(a, SparseSymmetric):
        perm = np.asarray(reverse_cuthill_mckee(a.full(), symmetric_mode=True), dtype=np.int64)
        dense = a.to_dense()[np.ix_(perm, perm)]
    else:
        dense = _dense_lower(a)
        perm = np.arange(dense.shape[0], dtype=np.int64)
    c, info = dpotrf(dense, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        failing = int(perm[info - 1])
        raise FactorizationError(failing)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    return CholeskyFactor(c, perm)


def solve(factor: CholeskyFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve A x = rhs given the factor of A."""
    return factor.solve(rhs)


def dense_spd_inverse(a: np.ndarray, center_index: Optional[int] = None) -> np.ndarray:
    """Full inverse of a dense SPD matrix via its Cholesky factor.

    ``center_index`` only labels the FactorizationError raised on a
    non-positive pivot (used by the localized per-neighborhood inversions).
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 1:
        v = a[0, 0]
        if v <= 0.0:
            raise FactorizationError(center_index if center_index is not None else 0)
        return np.array([[1.0 / v]])
    c, info = dpotrf(a, lower=1, clean=0, overwrite_a=0)
    if info != 0:
        raise FactorizationError(center_index if center_index is not None else int(info - 1))
    inv, info = dpotri(c, lower=1)
    if info != 0:
        raise FactorizationError(center_index if center_index is not None else int(info - 1))
    return np.tril(inv) + np.tril(inv, -1).T


class SpatialIndex:
    """Uniform-grid bucket index over a fixed point set in R^q, q in {1,2,3}.

    Cell edge defaults to the intended query radius; queries at other radii
    remain correct (more cells are scanned).  Neighborhoods use the strict
    inequality ``distance < radius`` throughout.
    """

    def __init__(self, points: np.ndarray, cell: float):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.size == 0:
            points = points.reshape(0, 1)
        if not math.isfinite(cell) or cell <= 0.0:
            raise ValueError("cell edge must be positive and finite")
        self.points = points
        self.cell = float(cell)
        self.dim = points.shape[1]
        self._origin = points.min(axis=0) if len(points) else np.zeros(self.dim)
        self._buckets: dict = {}
        keys = np.floor((points - self._origin) / self.cell).astype(np.int64)
        for i, key in enumerate(map(tuple, keys)):
            self._buckets.setdefault(key, []).append(i)

    def __len__(self) -> int:
        return len(self.points)

    def neighbors(self, center, radius: float) -> np.ndarray:
        """Sorted indices of all points with Euclidean distance < radius."""
        if not math.isfinite(radius) or radius <= 0.0:
            raise ValueError("radius must be positive and finite")
        if len(self.points) == 0:
            return np.empty(0, dtype=np.int64)
        center = np.asarray(center, dtype=float).reshape(self.dim)
        lo = np.floor((center - radius - self._origin) / self.cell).astype(np.int64)
        hi = np.floor((center + radius - self._origin) / self.cell).astype(np.int64)
        ranges = [range(lo[k], hi[k] + 1) for k in range(self.dim)]
        cand: list = []
        for key in _product(ranges):
            cand.extend(self._buckets.get(key, ()))
        if not cand:
            return np.empty(0, dtype=np.int64)
        cand = np.asarray(cand, dtype=np.int64)
        diff = self.points[cand] - center
        mask = np.einsum("ij,ij->i", diff, diff) < radius * radius
        return np.sort(cand[mask])


def _product(ranges: Sequence[range]) -> Iterable[tuple]:
    if len(ranges) == 1:
        for a in ranges[0]:
            yield (a,)
    elif len(ranges) == 2:
        for a in ranges[0]:
            for b in ranges[1]:
                yield (a, b)
    else:
        for a in ranges[0]:
            for rest in _product(ranges[1:]):
                yield (a, *rest)


def neighbors(index: SpatialIndex, center, radius: float) -> np.ndarray:
    """Module-level alias for :meth:`SpatialIndex.neighbors`."""
    return index.neighbors(center, radius)
