"""Deflation subspaces and the projector algebra built on them.

A tentative basis ``V`` (n x k) comes from one of three sources:

* ``nico``  known near-null-space vectors (constants, rigid-body modes,
  direction exponentials),
* ``tb``    randomly selected trunk functions of a trained DeepONet,
* ``rs``    DeepONet predictions for the current and for resampled inputs.

:func:`assemble_deflation` restricts ``V`` to every group of an
:class:`~dpcgnet.grouping.IndexSets`, orthonormalizes each restriction by QR
and places the blocks into a block-diagonal ``P``. With ``A_c = P^T A P``::

    C  = P A_c^{-1} P^T
    Pi = I - C A            (applied as  Pi^T r = r - A C r)
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grouping import IndexSets
from .sparse import NotSPDError, cholesky, dense_qr, dense_sym_eig, spmv

__all__ = [
    "TentativeBasis",
    "DeflationOperator",
    "nico_vectors",
    "tb_vectors",
    "rs_vectors",
    "assemble_deflation",
    "coarse_solve",
    "apply_C",
    "apply_Pi_T",
    "dense_operator",
    "dense_projector",
    "smallest_eigvecs",
    "deflated_spectrum",
    "save_basis",
    "save_deflation",
    "HELMHOLTZ_DIRECTIONS",
    "DENSE_SPECTRUM_MAX",
]

HELMHOLTZ_DIRECTIONS = np.array(
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (-1, 1), (1, -1)], dtype=np.float64
)
DENSE_SPECTRUM_MAX = 2500


@dataclass
class TentativeBasis:
    """Columns ``v_1 .. v_k`` of the tentative deflation matrix."""

    V: np.ndarray
    source: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        V = np.asarray(self.V, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        if V.ndim != 2 or V.shape[1] < 1:
            raise ValueError("a tentative basis needs at least one column")
        if not np.all(np.isfinite(V)):
            raise ValueError("tentative basis has non-finite entries")
        zero = np.flatnonzero(~np.any(V != 0.0, axis=0))
        if zero.size:
            raise ValueError(f"tentative basis column {int(zero[0])} is identically zero")
        self.V = V

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def k(self):
        return self.V.shape[1]


# ------------------------------------------------------------------ sources

def nico_vectors(kind, coords, params=None):
    """Near-null-space vectors.

    kind : {"constant", "rigid_body", "helmholtz"}
        ``constant`` gives one column of ones. ``rigid_body`` expects 3-D
        coordinates and returns the six translation/rotation modes with three
        rows per node. ``helmholtz`` returns ``exp(-k x . d_j / |d_j|)`` for
        the eight directions in :data:`HELMHOLTZ_DIRECTIONS`, with
        ``k = params["k_wave"]`` (default 1.0).
    """
    params = dict(params or {})
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    if coords.shape[0] == 0:
        raise ValueError("coords must be non-empty")
    kind_l = str(kind).lower()
    if kind_l == "constant":
        V = np.ones((coords.shape[0], 1))
    elif kind_l in ("rigid_body", "rigidbody"):
        if coords.shape[1] != 3:
            raise ValueError("rigid-body modes need 3-D coordinates")
        x, y, z = coords.T
        one, zero = np.ones_like(x), np.zeros_like(x)
        rows = np.stack([
            np.stack([one, zero, zero, zero, z, -y], axis=1),
            np.stack([zero, one, zero, -z, zero, x], axis=1),
            np.stack([zero, zero, one, y, -x, zero], axis=1),
        ], axis=1)
        V = rows.reshape(-1, 6)
    elif kind_l in ("helmholtz", "helmholtz_directions", "directions"):
        if coords.shape[1] != 2:
            raise ValueError("direction vectors need 2-D coordinates")
        dirs = np.asarray(params.get("directions", HELMHOLTZ_DIRECTIONS), dtype=np.float64)
        k_wave = float(params.get("k_wave", 1.0))
        unit = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        V = np.exp(-k_wave * coords @ unit.T)
        params = {"k_wave": k_wave, "directions": dirs.tolist()}
    else:
        raise ValueError(f"unknown NICO kind {kind!r}")
    return TentativeBasis(V, "nico", {"kind": kind_l, **params})


def tb_vectors(model, coords, k, seed=0):
    """``k`` trunk functions drawn uniformly without replacement.

    For a time-augmented model pass ``(x, t)`` rows as ``coords``.
    """
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > model.p:
        raise ValueError(f"cannot select k={k} trunk functions from p={model.p}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(model.p, size=k, replace=False)
    T = model.trunk_basis(coords)
    return TentativeBasis(T[:, idx], "tb", {"seed": seed, "indices": idx.tolist()})


def rs_vectors(model, coords, k, current_branch_input, seed=0):
    """Prediction at the current input plus ``k - 1`` predictions at inputs
    drawn from the model's training distribution.

    The ``j``-th extra input is always the ``j``-th draw of the seeded
    sampler, so bases for growing ``k`` are nested.
    """
    from .onet import sample_branch_inputs

    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    current = [np.asarray(y, dtype=np.float64).ravel() for y in current_branch_input]
    cols = [model.predict([y[None, :] for y in current], coords)[0]]
    sampled = []
    if k > 1:
        dist = model.branch_input_distribution
        if not dist:
            raise ValueError("recycled solutions need the model's branch-input distribution")
        rng = np.random.default_rng(seed)
        for _ in range(k - 1):
            ys = sample_branch_inputs(dist, rng, 1)
            sampled.append([y[0].tolist() for y in ys])
            cols.append(model.predict(ys, coords)[0])
    V = np.column_stack(cols)
    return TentativeBasis(V, "rs", {
        "seed": seed,
        "current_input": [y.tolist() for y in current],
        "sampled_inputs": sampled,
    })


# ----------------------------------------------------------------- assembly

class DeflationOperator:
    """Block-diagonal ``P``, cached ``A P`` and the factorized ``A_c``.

    Treat as immutable once built.
    """

    def __init__(self, A, blocks, index_sets, kept, drop_tol):
        self.n = A.n
        self.blocks = blocks
        self.index_sets = index_sets
        self.kept = kept
        self.drop_tol = drop_tol
        rows, cols, vals = [], [], []
        off = 0
        self.col_ranges = []
        for Q, idx in zip(blocks, index_sets.sets):
            ks = Q.shape[1]
            r, c = np.meshgrid(idx, np.arange(off, off + ks), indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(Q.ravel())
            self.col_ranges.append((off, off + ks))
            off += ks
        self.coarse_dim = off
        if off == 0:
            raise ValueError("every group lost all its columns; the deflation space is empty")
        self.P = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, off),
        )
        self.PT = sp.csr_matrix(self.P.T)
        self.AP = np.asarray(spmv(A, self.P.toarray()))
        Ac = np.asarray(self.PT @ self.AP)
        self.A_c = 0.5 * (Ac + Ac.T)
        try:
            self.A_c_factor = cholesky(self.A_c)
        except NotSPDError as exc:
            raise NotSPDError(
                f"coarse matrix A_c is not SPD ({exc}); either A is not SPD or P is "
                f"numerically rank deficient (retry with a larger drop_tol than {drop_tol:g})",
                pivot=exc.pivot,
            ) from exc
        self._A = A
        for arr in (self.AP, self.A_c):
            arr.flags.writeable = False

    def dense_P(self):
        return self.P.toarray()

    def coarse_solve(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.coarse_dim:
            raise ValueError(f"dimension mismatch: coarse space is {self.coarse_dim}, got {y.shape[0]}")
        return self.A_c_factor.solve(y)

    def restrict(self, r):
        """``P^T r``."""
        return self.PT @ r

    def prolong(self, mu):
        """``P mu``."""
        return self.P @ mu

    def apply_C(self, r):
        r = self._check(r)
        return self.P @ self.coarse_solve(self.PT @ r)

    def apply_Pi_T(self, r):
        r = self._check(r)
        return r - self.AP @ self.coarse_solve(self.PT @ r)

    def apply_Pi(self, u):
        u = self._check(u)
        return u - self.P @ self.coarse_solve(self.AP.T @ u)

    def _check(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape[0] != self.n:
            raise ValueError(f"dimension mismatch: operator is {self.n}, vector has {r.shape[0]}")
        return r

    def describe(self):
        return {
            "groups": len(self.index_sets),
            "coarse_dim": self.coarse_dim,
            "block_ranks": [int(Q.shape[1]) for Q in self.blocks],
            "drop_tol": self.drop_tol,
        }


def assemble_deflation(A, V, groups=None, drop_tol=1e-10):
    """Split ``V`` by groups, orthonormalize every block, factorize ``A_c``.

    Columns that are numerically dependent within a group (pivoted QR with
    relative threshold ``drop_tol``) are dropped for that group only. A group
    whose rows of ``V`` all vanish contributes no columns and triggers a
    warning.
    """
    if isinstance(V, TentativeBasis):
        Vm = V.V
    else:
        Vm = np.asarray(V, dtype=np.float64)
        Vm = Vm[:, None] if Vm.ndim == 1 else Vm
    if Vm.shape[0] != A.n:
        raise ValueError(f"basis has {Vm.shape[0]} rows, matrix is {A.n}")
    if groups is None:
        groups = IndexSets([np.arange(A.n)], A.n)
    elif not isinstance(groups, IndexSets):
        groups = IndexSets(groups, A.n)
    if groups.n_total != A.n:
        raise ValueError("groups do not cover the matrix dofs")
    blocks, kept = [], []
    for g, idx in enumerate(groups.sets):
        Q, _, cols = dense_qr(Vm[idx], drop_tol)
        if not cols:
            warnings.warn(f"group {g} contributes no deflation vectors (zero rows in V)",
                          RuntimeWarning, stacklevel=2)
        blocks.append(Q)
        kept.append(cols)
    return DeflationOperator(A, blocks, groups, kept, drop_tol)


def coarse_solve(D, y):
    return D.coarse_solve(y)


def apply_C(D, r):
    return D.apply_C(r)


def apply_Pi_T(D, r):
    return D.apply_Pi_T(r)


# ----------------------------------------------------------- dense oracles

def dense_operator(M, n):
    """Dense matrix of a linear operator given by ``M(x)`` or ``M.apply``."""
    app = M.apply if hasattr(M, "apply") else M
    return np.column_stack([app(e) for e in np.eye(n)])


def dense_projector(A, D):
    """``Pi = I - P A_c^{-1} P^T A`` formed densely (tests only)."""
    Ad = A.to_dense()
    P = D.dense_P()
    return np.eye(A.n) - P @ np.linalg.solve(D.A_c, P.T @ Ad)


def _sym_sqrt_factor(M, n):
    Md = dense_operator(M, n)
    Md = 0.5 * (Md + Md.T)
    return cholesky(Md).L


def smallest_eigvecs(A, M, k):
    """The ``k`` smallest eigenpairs of ``M A`` via the similar matrix
    ``L^T A L`` (``M = L L^T``) and the cyclic Jacobi solver."""
    n = A.n
    if n > DENSE_SPECTRUM_MAX:
        raise ValueError(f"dense eigen path limited to n <= {DENSE_SPECTRUM_MAX}")
    L = _sym_sqrt_factor(M, n)
    w, Y = dense_sym_eig(L.T @ A.to_dense() @ L)
    return w[:k], L @ Y[:, :k]


def deflated_spectrum(A, M, D=None):
    """Eigenvalues (ascending) of the deflated preconditioned operator.

    Computes the spectrum of ``M Pi^T A`` through the symmetric similar
    matrix ``L^T (Pi^T A) L`` with ``M = L L^T``. ``Pi^T A`` is symmetric
    positive semidefinite. When ``M`` commutes with ``Pi^T`` (e.g. a constant
    Jacobi scaling) this is also the spectrum of ``Pi^T M A``. Without ``D``
    it is the spectrum of ``M A``.
    """
    n = A.n
    if n > DENSE_SPECTRUM_MAX:
        raise ValueError(f"dense eigen path limited to n <= {DENSE_SPECTRUM_MAX}")
    Ad = A.to_dense()
    B = Ad if D is None else dense_projector(A, D).T @ Ad
    B = 0.5 * (B + B.T)
    if M is None:
        w, _ = dense_sym_eig(B)
        return w
    L = _sym_sqrt_factor(M, n)
    w, _ = dense_sym_eig(L.T @ B @ L)
    return w


# ---------------------------------------------------------------- export

def save_basis(basis, stem):
    """``<stem>_V.txt`` (whitespace matrix) plus ``<stem>_provenance.json``."""
    np.savetxt(f"{stem}_V.txt", basis.V, fmt="%.17g")
    with open(f"{stem}_provenance.json", "w") as fh:
        json.dump({"source": basis.source, "n": basis.n, "k": basis.k, **basis.provenance},
                  fh, indent=1, sort_keys=True, default=_json_default)


def save_deflation(D, stem):
    """``<stem>_P.txt`` and ``<stem>_groups.json``."""
    np.savetxt(f"{stem}_P.txt", D.dense_P(), fmt="%.17g")
    with open(f"{stem}_groups.json", "w") as fh:
        fh.write(D.index_sets.to_json())


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")
