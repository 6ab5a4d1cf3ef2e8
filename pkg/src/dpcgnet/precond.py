"""SPD preconditioners with a common ``z = M r`` contract.

``build_preconditioner`` is the single entry point; every returned object is
callable and exposes ``apply``. Kinds: ``identity``, ``jacobi``, ``ssor``,
``icc`` (zero fill) and ``asm`` (one-level additive Schwarz with exact dense
subdomain solves).
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .sparse import NotSPDError, SparseMatrix, cholesky

__all__ = [
    "Preconditioner",
    "IdentityPreconditioner",
    "JacobiPreconditioner",
    "SSORPreconditioner",
    "ICC0Preconditioner",
    "ASMPreconditioner",
    "build_preconditioner",
    "apply",
    "icc0_factor",
    "overlap_extend",
    "ASM_MAX_SUBDOMAIN",
]

ASM_MAX_SUBDOMAIN = 3000


class Preconditioner:
    kind = "abstract"

    def __init__(self, n):
        self.n = int(n)

    def _check(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: preconditioner is {self.n}, vector has {r.shape[0]}")
        return r

    def apply(self, r):
        raise NotImplementedError

    def __call__(self, r):
        return self.apply(r)

    def describe(self):
        return {"kind": self.kind}

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n})"


class IdentityPreconditioner(Preconditioner):
    kind = "identity"

    def apply(self, r):
        return self._check(r).copy()


class JacobiPreconditioner(Preconditioner):
    kind = "jacobi"

    def __init__(self, A):
        super().__init__(A.n)
        d = A.diagonal()
        if np.any(d <= 0):
            raise NotSPDError("Jacobi needs a positive diagonal", pivot=int(np.argmax(d <= 0)))
        self.inv_diag = 1.0 / d

    def apply(self, r):
        return self._check(r) * self.inv_diag


class SSORPreconditioner(Preconditioner):
    """``M = w(2-w) (D + wL)^{-T} D (D + wL)^{-1}`` for ``A = L + D + L^T``."""

    kind = "ssor"

    def __init__(self, A, omega=1.0):
        super().__init__(A.n)
        if not 0.0 < omega < 2.0:
            raise ValueError(f"SSOR needs 0 < omega < 2, got {omega}")
        self.omega = float(omega)
        S = A.to_scipy()
        self.d = S.diagonal()
        if np.any(self.d <= 0):
            raise NotSPDError("SSOR needs a positive diagonal")
        lower = sp.tril(S, k=-1) * self.omega + sp.diags(self.d)
        self._lower = sp.csr_matrix(lower)
        self._upper = sp.csr_matrix(lower.T)
        self._scale = self.omega * (2.0 - self.omega)

    def apply(self, r):
        r = self._check(r)
        y = spsolve_triangular(self._lower, r, lower=True)
        y *= self.d
        z = spsolve_triangular(self._upper, y, lower=False)
        return self._scale * z

    def describe(self):
        return {"kind": self.kind, "omega": self.omega}


def icc0_factor(A, shift=0.0):
    """Zero-fill incomplete Cholesky on the lower pattern of ``A + shift I``.

    Returns the lower factor as a ``scipy.sparse.csr_matrix``.

    Raises
    ------
    NotSPDError
        On a non-positive pivot. Retrying with ``shift = 1e-3 * max(diag A)``
        usually cures the breakdown.
    """
    S = sp.tril(A.to_scipy()).tocsr()
    S.sort_indices()
    n = A.n
    indptr, indices = S.indptr, S.indices
    data = S.data.astype(np.float64).copy()
    diag_pos = indptr[1:] - 1   # lower-triangular rows end at the diagonal
    if np.any(indices[diag_pos] != np.arange(n)):
        raise NotSPDError("ICC(0) needs a stored diagonal in every row")
    data[diag_pos] += shift
    # row-wise left-looking: L_ij = (a_ij - sum_k L_ik L_jk) / L_jj over the shared pattern
    rows = [dict(zip(indices[indptr[i]:indptr[i + 1]], range(indptr[i], indptr[i + 1]))) for i in range(n)]
    for i in range(n):
        start, end = indptr[i], indptr[i + 1] - 1
        row_i = rows[i]
        for p in range(start, end):
            j = indices[p]
            s = data[p]
            row_j = rows[j]
            for k, pk in row_i.items():
                if k >= j:
                    continue
                qk = row_j.get(k)
                if qk is not None:
                    s -= data[pk] * data[qk]
            data[p] = s / data[diag_pos[j]]
        s = data[end] - np.dot(data[start:end], data[start:end])
        if not s > 0.0:
            raise NotSPDError(
                f"ICC(0) breakdown: non-positive pivot at index {i}; "
                f"retry with shift=1e-3*max(diag A)",
                pivot=i,
            )
        data[end] = np.sqrt(s)
    return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(n, n))


class ICC0Preconditioner(Preconditioner):
    kind = "icc"

    def __init__(self, A, shift=0.0):
        super().__init__(A.n)
        self.shift = float(shift)
        self.L = icc0_factor(A, shift)
        self._LT = sp.csr_matrix(self.L.T)

    def apply(self, r):
        r = self._check(r)
        y = spsolve_triangular(self.L, r, lower=True)
        return spsolve_triangular(self._LT, y, lower=False)

    def describe(self):
        return {"kind": self.kind, "shift": self.shift}


def overlap_extend(A, index_set, layers):
    """Grow ``index_set`` by ``layers`` rings of matrix-graph neighbours."""
    S = A.to_scipy()
    mask = np.zeros(A.n, dtype=bool)
    mask[np.asarray(index_set, dtype=np.int64)] = True
    for _ in range(layers):
        # neighbours of the current set: any column touched by one of its rows
        mask = mask | (S.T @ mask.astype(np.float64) != 0) | (S @ mask.astype(np.float64) != 0)
    return np.flatnonzero(mask)


class ASMPreconditioner(Preconditioner):
    """``M = sum_s R_s^T (R_s A R_s^T)^{-1} R_s`` over overlapping subdomains."""

    kind = "asm"

    def __init__(self, A, subdomains, overlap=1):
        super().__init__(A.n)
        if overlap < 0:
            raise ValueError("overlap must be >= 0")
        sets = subdomains.sets if hasattr(subdomains, "sets") else list(subdomains)
        covered = np.zeros(A.n, dtype=bool)
        for s in sets:
            covered[np.asarray(s, dtype=np.int64)] = True
        if not covered.all():
            raise ValueError("ASM subdomains must cover every dof")
        self.overlap = int(overlap)
        S = A.to_scipy()
        self.index_sets = []
        self.factors = []
        for s in sets:
            idx = overlap_extend(A, s, overlap)
            if idx.size > ASM_MAX_SUBDOMAIN:
                raise ValueError(
                    f"ASM subdomain has {idx.size} dofs, limit is {ASM_MAX_SUBDOMAIN}"
                )
            block = S[idx][:, idx].toarray()
            self.index_sets.append(idx)
            self.factors.append(cholesky(block))

    @property
    def n_subdomains(self):
        return len(self.index_sets)

    def apply(self, r):
        r = self._check(r)
        z = np.zeros(self.n)
        for idx, fac in zip(self.index_sets, self.factors):
            z[idx] += fac.solve(r[idx])
        return z

    def describe(self):
        return {"kind": self.kind, "subdomains": self.n_subdomains, "overlap": self.overlap}


_ALIASES = {"none": "identity", "icc0": "icc", "ic0": "icc", "ict": "icc"}


def build_preconditioner(A, kind="identity", omega=1.0, subdomains=None, overlap=1, shift=0.0):
    """Construct a preconditioner for the SPD matrix ``A``.

    Parameters
    ----------
    kind : {"identity", "jacobi", "ssor", "icc", "asm"}
    omega : float
        SSOR relaxation factor.
    subdomains : IndexSets or list of index arrays
        Non-overlapping cover of the dofs (ASM only).
    overlap : int
        Layers of graph neighbours added to every subdomain (ASM only).
    shift : float
        Diagonal shift for ICC(0).
    """
    if not isinstance(A, SparseMatrix):
        A = SparseMatrix.from_scipy(A)
    kind = _ALIASES.get(str(kind).lower(), str(kind).lower())
    if kind == "identity":
        return IdentityPreconditioner(A.n)
    if kind == "jacobi":
        return JacobiPreconditioner(A)
    if kind == "ssor":
        return SSORPreconditioner(A, omega)
    if kind == "icc":
        return ICC0Preconditioner(A, shift)
    if kind == "asm":
        if subdomains is None:
            raise ValueError("ASM needs subdomain index sets")
        return ASMPreconditioner(A, subdomains, overlap)
    raise ValueError(f"unknown preconditioner kind {kind!r}")


def apply(M, r):
    return M.apply(r)
