"""CSR matrices and the small dense kernels used around them.

The CSR container stores its three arrays read-only. Matrix-vector products
go through a cached :mod:`scipy.sparse` view of the same arrays; the dense
helpers (pivoted QR, Cholesky, cyclic Jacobi) serve deflation-block
assembly, coarse solves and the spectral test oracles.
"""

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.linalg import lapack

__all__ = [
    "SparseMatrix",
    "CholeskyFactor",
    "NotSPDError",
    "spmv",
    "dense_qr",
    "dense_sym_eig",
    "cholesky",
    "read_matrix_market",
    "write_matrix_market",
]


class NotSPDError(np.linalg.LinAlgError):
    """Raised when a factorization meets a non-positive pivot."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SparseMatrix:
    """Square CSR matrix with sorted column indices in every row.

    Parameters
    ----------
    n : int
        Number of rows and columns.
    row_ptr, col_idx, values : array_like
        Standard CSR arrays. ``row_ptr`` has length ``n + 1``.
    check : bool
        Validate the CSR invariants (monotone offsets, in-range and strictly
        increasing column indices within each row).
    """

    def __init__(self, n, row_ptr, col_idx, values, check=True):
        self.n = int(n)
        self.row_ptr = np.ascontiguousarray(row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if check:
            self._validate()
        for arr in (self.row_ptr, self.col_idx, self.values):
            arr.flags.writeable = False
        self._scipy = None

    def _validate(self):
        n, rp, ci = self.n, self.row_ptr, self.col_idx
        if rp.shape != (n + 1,):
            raise ValueError(f"row_ptr must have length {n + 1}, got {rp.shape[0]}")
        if rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must start at 0 and be nondecreasing")
        if rp[-1] != ci.shape[0] or ci.shape != self.values.shape:
            raise ValueError("row_ptr[n] must equal nnz = len(col_idx) = len(values)")
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise ValueError("column index out of range")
        if ci.size > 1:
            # strictly increasing inside a row; row starts reset the comparison
            inc = np.diff(ci) > 0
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[rp[1:-1][rp[1:-1] < ci.size]] = True
            if not np.all(inc | row_start[1:]):
                raise ValueError("column indices must be strictly increasing in each row")

    @classmethod
    def from_scipy(cls, mat):
        m = sp.csr_matrix(mat, dtype=np.float64)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"matrix must be square, got {m.shape}")
        m.sum_duplicates()
        m.sort_indices()
        out = cls(m.shape[0], m.indptr, m.indices, m.data)
        return out

    @classmethod
    def from_dense(cls, a, tol=0.0):
        a = np.asarray(a, dtype=np.float64)
        mask = np.abs(a) > tol
        m = sp.csr_matrix(np.where(mask, a, 0.0))
        m.eliminate_zeros()
        return cls.from_scipy(m)

    @classmethod
    def identity(cls, n):
        return cls(n, np.arange(n + 1), np.arange(n), np.ones(n))

    @property
    def nnz(self):
        return int(self.col_idx.shape[0])

    @property
    def shape(self):
        return (self.n, self.n)

    def to_scipy(self):
        """Return a cached ``scipy.sparse.csr_matrix`` sharing the data."""
        if self._scipy is None:
            self._scipy = sp.csr_matrix(
                (self.values, self.col_idx, self.row_ptr), shape=(self.n, self.n)
            )
        return self._scipy

    def to_dense(self):
        return self.to_scipy().toarray()

    def diagonal(self):
        return self.to_scipy().diagonal()

    def __matmul__(self, x):
        return spmv(self, x)

    def scaled(self, c):
        return SparseMatrix(self.n, self.row_ptr, self.col_idx, c * self.values, check=False)

    def is_symmetric(self, tol=0.0):
        """Check pattern and value symmetry (``|a_ij - a_ji| <= tol * max|a|``)."""
        s = self.to_scipy()
        d = (s - s.T).tocsr()
        if d.nnz == 0:
            return True
        scale = np.abs(self.values).max() if self.nnz else 1.0
        return bool(np.abs(d.data).max() <= tol * scale)

    def __repr__(self):
        return f"SparseMatrix(n={self.n}, nnz={self.nnz})"


def spmv(A, x):
    """Return ``A @ x`` for a :class:`SparseMatrix` (or 2-D block ``x``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.n:
        raise ValueError(f"dimension mismatch: A is {A.n}x{A.n}, x has {x.shape[0]} rows")
    return A.to_scipy() @ x


def dense_qr(B, drop_tol=1e-10):
    """Rank-revealing thin QR of a dense block.

    Column pivoting decides which columns survive: a pivot whose ``|R_ii|``
    falls below ``drop_tol * max|R_ii|`` is treated as linearly dependent.
    The surviving columns are then re-factorized in their original order, so
    ``Q @ R == B[:, kept]`` with ``R`` upper triangular and ``diag(R) > 0``.

    Returns
    -------
    Q : ndarray, shape (m, r)
    R : ndarray, shape (r, r)
    kept : list of int
        Original indices of the retained columns, ascending. Empty when the
        block is numerically zero.
    """
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if B.shape[0] < 1:
        raise ValueError("dense_qr needs at least one row")
    m, k = B.shape
    if k == 0 or not np.any(B):
        return np.zeros((m, 0)), np.zeros((0, 0)), []
    _, R_piv, piv = scipy.linalg.qr(B, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R_piv))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros((m, 0)), np.zeros((0, 0)), []
    rank = int(np.count_nonzero(diag >= drop_tol * diag[0]))
    kept = sorted(int(j) for j in piv[:rank])
    Q, R = np.linalg.qr(B[:, kept], mode="reduced")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    R = R * signs[:, None]
    return Q, R, kept


def _round_robin(m):
    """Pairings for ``m - 1`` rounds over ``m`` (even) players, circle method."""
    ring = list(range(m))
    rounds = []
    for _ in range(m - 1):
        rounds.append([(ring[i], ring[m - 1 - i]) for i in range(m // 2)])
        ring = [ring[0], ring[-1]] + ring[1:-1]
    return rounds


def dense_sym_eig(A, tol=1e-12, max_sweeps=60):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs so that one round is a single vectorized orthogonal
    update. Iterates until the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F``. Intended as an independent oracle, not as a fast
    eigensolver.

    Returns
    -------
    w : ndarray
        Eigenvalues, ascending.
    V : ndarray
        Orthonormal eigenvectors as columns, ``A @ V = V * w``.
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("dense_sym_eig needs a square matrix")
    n = A.shape[0]
    scale = np.abs(A).max() if n else 0.0
    if n and np.abs(A - A.T).max() > 1e-10 * max(scale, np.finfo(float).tiny):
        raise ValueError("dense_sym_eig needs a symmetric matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n <= 1:
        return np.diag(A).copy(), V
    fro = np.linalg.norm(A)
    if fro == 0.0:
        return np.zeros(n), V

    m = n + (n % 2)
    rounds = []
    for pairs in _round_robin(m):
        pq = np.array([(p, q) if p < q else (q, p) for p, q in pairs if p < n and q < n])
        rounds.append((pq[:, 0], pq[:, 1]))

    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off < tol * fro:
            break
        for p, q in rounds:
            apq = A[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore", divide="ignore"):
                # tiny a_pq overflows theta to inf, which correctly gives t = 0
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # A <- J^T A J, columns then rows
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            A[p, q] = 0.0
            A[q, p] = 0.0
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = c * Vp - s * Vq
            V[:, q] = s * Vp + c * Vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``A = L @ L.T``."""

    def __init__(self, L):
        self.L = np.ascontiguousarray(L)
        self.L.flags.writeable = False

    @property
    def n(self):
        return self.L.shape[0]

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: factor is {self.n}, rhs has {b.shape[0]}")
        if self.n == 0:
            return np.zeros_like(b)
        y = scipy.linalg.solve_triangular(self.L, b, lower=True, check_finite=False)
        return scipy.linalg.solve_triangular(self.L, y, lower=True, trans="T", check_finite=False)

    def reconstruct(self):
        return self.L @ self.L.T


def cholesky(A):
    """Dense Cholesky factorization.

    Raises
    ------
    NotSPDError
        If a pivot is not positive; the 0-based pivot index is attached.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("cholesky needs a square matrix")
    if A.shape[0] == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    c, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotSPDError(f"matrix is not SPD: non-positive pivot at index {info - 1}", pivot=info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return CholeskyFactor(np.tril(c))


def write_matrix_market(path, A, comment=""):
    """Write a symmetric matrix in coordinate format (lower triangle, 1-based)."""
    m = A.to_scipy() if isinstance(A, SparseMatrix) else sp.csr_matrix(A)
    scipy.io.mmwrite(str(path), m, comment=comment, symmetry="symmetric", precision=17)


def read_matrix_market(path):
    m = scipy.io.mmread(str(path))
    return SparseMatrix.from_scipy(sp.csr_matrix(m))
