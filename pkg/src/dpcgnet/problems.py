"""Parametric SPD benchmark systems on structured grids.

All 2-D problems live on a uniform grid of interior nodes. Dirichlet nodes
on the boundary are eliminated, node ids are lexicographic
(``id = iy * nx + ix``) and each interior node owns the square control
volume of side ``h`` centred on it. Cell-placed coefficients are indexed by
those control volumes, so a coefficient jump between two cells sits exactly
on the face separating two nodes.

The diffusion operator is the two-point flux scheme with harmonic averaging
of the cell coefficients across each face. For constant ``K`` it reduces to
``K`` times the 5-point Laplacian.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse import SparseMatrix, cholesky

__all__ = [
    "Grid2D",
    "ScalarField",
    "ParametricProblem",
    "build_poisson_1d",
    "sample_grf",
    "grf_covariance",
    "build_darcy_2d",
    "build_jump_darcy",
    "default_channel_mask",
    "sample_log_k_channel",
    "jump_darcy_rhs",
    "heat_step_system",
    "heat_initial_condition",
    "laplacian_2d",
    "load_mask",
    "save_problem",
]

GRF_MAX_NODES = 20000


@dataclass(frozen=True)
class Grid2D:
    """Uniform grid of ``nx * ny`` interior nodes with spacing ``h``.

    The domain is ``[0, (nx + 1) h] x [0, (ny + 1) h]``; the default spacing
    puts the unit square under the grid.
    """

    nx: int
    ny: int
    h: float = None

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if self.h is None:
            object.__setattr__(self, "h", 1.0 / (max(self.nx, self.ny) + 1))
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def unit_square(cls, n):
        return cls(n, n, 1.0 / (n + 1))

    @property
    def n(self):
        return self.nx * self.ny

    @property
    def coords(self):
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.column_stack([(ix.ravel() + 1) * self.h, (iy.ravel() + 1) * self.h])

    def node_id(self, ix, iy):
        return iy * self.nx + ix


@dataclass
class ScalarField:
    values: np.ndarray
    placement: str = "node"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.placement not in ("node", "cell"):
            raise ValueError(f"unknown placement {self.placement!r}")

    def check(self, grid):
        if self.values.shape[0] != grid.n:
            raise ValueError(
                f"{self.placement} field has {self.values.shape[0]} values, grid has {grid.n}"
            )
        return self


@dataclass
class ParametricProblem:
    """One assembled system ``A u = f`` plus what produced it."""

    A: SparseMatrix
    f: np.ndarray
    coords: np.ndarray
    theta: dict = field(default_factory=dict)
    grid: Grid2D = None
    mass: SparseMatrix = None
    stiffness: SparseMatrix = None
    dt: float = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=np.float64)
        if self.f.shape[0] != self.A.n:
            raise ValueError("len(f) must equal A.n")

    @property
    def n(self):
        return self.A.n


def build_poisson_1d(n, f_spec=None):
    """``-u'' = f`` on (0, 1), homogeneous Dirichlet, ``n`` interior nodes.

    ``f_spec`` is a callable of ``x``, a constant, or an array of nodal values.
    """
    if n < 2:
        raise ValueError(f"1-D Poisson needs n >= 2, got {n}")
    h = 1.0 / (n + 1)
    x = h * np.arange(1, n + 1)
    A = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h**2
    if f_spec is None:
        f = np.zeros(n)
    elif callable(f_spec):
        f = np.asarray(f_spec(x), dtype=np.float64) * np.ones(n)
    else:
        f = np.broadcast_to(np.asarray(f_spec, dtype=np.float64), (n,)).copy()
    return ParametricProblem(SparseMatrix.from_scipy(A), f, x[:, None], {"kind": "poisson1d", "n": n})


def grf_covariance(coords, sigma, ell):
    """``sigma^2 exp(-|x1 - x2| / (2 ell^2))`` for every pair of points."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim == 1:
        coords = coords[:, None]
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return sigma**2 * np.exp(-dist / (2.0 * ell**2))


_grf_cache = {}


def _grf_factor(coords, sigma, ell):
    key = (coords.shape, coords.tobytes(), float(sigma), float(ell))
    L = _grf_cache.get(key)
    if L is None:
        C = grf_covariance(coords, sigma, ell)
        C[np.diag_indices_from(C)] += 1e-10
        L = cholesky(C).L
        if len(_grf_cache) > 8:
            _grf_cache.clear()
        _grf_cache[key] = L
    return L


def sample_grf(grid, mean, sigma, ell, seed, size=None):
    """Gaussian random field on the nodes (or any point set) of ``grid``.

    Parameters
    ----------
    grid : Grid2D or array_like
        Either a grid (samples at its node coordinates) or an explicit
        ``(m, d)`` coordinate array.
    seed : int or numpy Generator
    size : int, optional
        Draw ``size`` independent fields at once (returns a 2-D array).

    Returns
    -------
    ScalarField, or ndarray of shape ``(size, m)`` when ``size`` is given.
    """
    if not sigma > 0 or not ell > 0:
        raise ValueError("sigma and ell must be positive")
    coords = grid.coords if isinstance(grid, Grid2D) else np.atleast_2d(np.asarray(grid, float))
    if coords.shape[0] > GRF_MAX_NODES:
        raise ValueError(
            f"dense GRF covariance limited to {GRF_MAX_NODES} nodes, got {coords.shape[0]}"
        )
    L = _grf_factor(coords, sigma, ell)
    rng = np.random.default_rng(seed)
    m = coords.shape[0]
    z = rng.standard_normal((m,) if size is None else (size, m))
    vals = mean + z @ L.T
    if size is not None:
        return vals
    return ScalarField(vals, "cell")


def _face_coefficients(grid, Kc):
    """Harmonic face transmissibilities (per unit ``1/h^2``) of a cell field."""
    K = Kc.reshape(grid.ny, grid.nx)
    kx = 2.0 * K[:, :-1] * K[:, 1:] / (K[:, :-1] + K[:, 1:])   # between (ix, ix+1)
    ky = 2.0 * K[:-1, :] * K[1:, :] / (K[:-1, :] + K[1:, :])   # between (iy, iy+1)
    return K, kx, ky


def _assemble_flux(grid, Kc):
    nx, ny = grid.nx, grid.ny
    K, kx, ky = _face_coefficients(grid, Kc)
    ids = np.arange(grid.n).reshape(ny, nx)
    diag = np.zeros((ny, nx))
    # interior faces
    diag[:, :-1] += kx
    diag[:, 1:] += kx
    diag[:-1, :] += ky
    diag[1:, :] += ky
    # faces to eliminated Dirichlet nodes carry the cell's own coefficient
    diag[:, 0] += K[:, 0]
    diag[:, -1] += K[:, -1]
    diag[0, :] += K[0, :]
    diag[-1, :] += K[-1, :]
    rows = [ids.ravel(), ids[:, :-1].ravel(), ids[:, 1:].ravel(), ids[:-1, :].ravel(), ids[1:, :].ravel()]
    cols = [ids.ravel(), ids[:, 1:].ravel(), ids[:, :-1].ravel(), ids[1:, :].ravel(), ids[:-1, :].ravel()]
    vals = [diag.ravel(), -kx.ravel(), -kx.ravel(), -ky.ravel(), -ky.ravel()]
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.n, grid.n)
    )
    return A.tocsr() / grid.h**2


def laplacian_2d(grid):
    """5-point Laplacian ``(1/h^2) [4, -1, -1, -1, -1]`` on ``grid``."""
    return SparseMatrix.from_scipy(_assemble_flux(grid, np.ones(grid.n)))


def _as_values(field_or_array, grid, name):
    vals = field_or_array.values if isinstance(field_or_array, ScalarField) else field_or_array
    vals = np.broadcast_to(np.asarray(vals, dtype=np.float64), (grid.n,)).copy()
    return vals


def build_darcy_2d(grid, K, f, theta=None):
    """``-div(K grad u) = f`` with ``u = 0`` on the boundary.

    ``K`` is a strictly positive cell field (or scalar), ``f`` a nodal field
    (or scalar, or callable of the node coordinates).
    """
    if isinstance(K, ScalarField) and K.placement != "cell":
        raise ValueError("K must be cell-placed")
    Kc = _as_values(K, grid, "K")
    if np.any(~(Kc > 0)):
        raise ValueError("diffusion coefficient must be strictly positive")
    if callable(f):
        fv = np.asarray(f(grid.coords), dtype=np.float64)
    else:
        fv = _as_values(f, grid, "f")
    A = SparseMatrix.from_scipy(_assemble_flux(grid, Kc))
    th = {"kind": "darcy"} if theta is None else dict(theta)
    return ParametricProblem(A, fv, grid.coords, th, grid=grid)


def jump_darcy_rhs(coords):
    x1, x2 = coords[:, 0], coords[:, 1]
    return np.sin(4 * np.pi * x1) * np.sin(2 * np.pi * x2) * np.sin(2 * np.pi * x1 * x2)


def default_channel_mask(grid, spacing=10, width=2):
    """Grid-of-channels mask: vertical and horizontal bars of ``width`` cells
    centred on every multiple of ``spacing``; bars that would touch the
    boundary are left out."""
    def bars(m):
        on = np.zeros(m, dtype=bool)
        for start in range(spacing - width // 2, m - width, spacing):
            on[start:start + width] = True
        return on

    bx, by = bars(grid.nx), bars(grid.ny)
    return (by[:, None] | bx[None, :]).ravel()


def sample_log_k_channel(seed, low=0.0, high=5.0):
    """Channel coefficient with ``log10 K ~ U[low, high]``."""
    return 10.0 ** np.random.default_rng(seed).uniform(low, high)


def build_jump_darcy(grid, channel_mask=None, K_channel=1.0):
    """Darcy problem with ``K = 1`` off-channel and ``K = K_channel`` on it,
    right-hand side ``sin(4 pi x1) sin(2 pi x2) sin(2 pi x1 x2)``."""
    if not 1.0 <= K_channel <= 1e5:
        raise ValueError(f"K_channel must lie in [1, 1e5], got {K_channel}")
    mask = default_channel_mask(grid) if channel_mask is None else np.asarray(channel_mask, bool).ravel()
    if mask.shape[0] != grid.n:
        raise ValueError("channel mask does not match the grid cells")
    K = np.where(mask, K_channel, 1.0)
    prob = build_darcy_2d(grid, ScalarField(K, "cell"), jump_darcy_rhs,
                          theta={"kind": "jump_darcy", "K_channel": float(K_channel)})
    prob.theta["mask"] = mask
    return prob


def heat_initial_condition(coords):
    return np.exp(-5.0 * (coords[:, 0] ** 2 + coords[:, 1] ** 2))


def heat_step_system(grid, K, dt, u_prev):
    """One implicit-Euler step of ``u_t = K lap u``.

    Uses the lumped mass ``h^2 I`` and the unscaled 5-point stiffness, so
    ``A = (1/dt) M + K S`` and ``f = (1/dt) M u_prev``.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    if not 1.0 <= K <= 2.0:
        raise ValueError(f"thermal diffusivity must lie in [1, 2], got {K}")
    u_prev = np.asarray(u_prev, dtype=np.float64)
    if u_prev.shape[0] != grid.n:
        raise ValueError("u_prev does not match the grid")
    h2 = grid.h**2
    S = _assemble_flux(grid, np.ones(grid.n)) * h2
    M = sp.identity(grid.n, format="csr") * h2
    A = M / dt + K * S
    mass = SparseMatrix.from_scipy(M)
    stiff = SparseMatrix.from_scipy(S)
    f = (h2 / dt) * u_prev
    return ParametricProblem(
        SparseMatrix.from_scipy(A), f, grid.coords, {"kind": "heat", "K": float(K), "dt": float(dt)},
        grid=grid, mass=mass, stiffness=stiff, dt=dt,
    )


def load_mask(path):
    """Read a 0/1 raster (one grid row per text line, bottom row first)."""
    rows = [line.split() for line in open(path) if line.strip()]
    return np.array([[int(v) for v in r] for r in rows], dtype=bool).ravel()


def save_problem(prob, stem):
    """Write ``<stem>.mtx`` plus ``<stem>_f.txt`` and ``<stem>_coords.txt``."""
    from .sparse import write_matrix_market

    write_matrix_market(f"{stem}.mtx", prob.A)
    np.savetxt(f"{stem}_f.txt", prob.f, fmt="%.17g")
    np.savetxt(f"{stem}_coords.txt", prob.coords, fmt="%.17g")
