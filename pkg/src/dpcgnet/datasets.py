"""Training sets for the DeepONet surrogates.

Each generator draws ``N_s`` parameter samples with a seeded generator,
solves the discrete problem directly and returns a :class:`Dataset` whose
``meta["distribution"]`` is the branch-input description later used for
resampling (see :func:`dpcgnet.onet.sample_branch_inputs`).

Families:

``poisson1d``   ``-u'' = f`` with ``f = sum_m c_m sin(m pi x)``; branch input
                ``f`` at equispaced sensors.
``jump_darcy``  channel coefficient with ``log10 K ~ U[0, 5]``; branch input
                ``log10 K``.
``darcy``       ``K = exp(g)`` with ``g`` a GRF (mean 0.5, sigma 1, ell 0.1)
                and ``f`` a GRF (mean 0, sigma 1, ell 0.05); two branches
                holding ``g`` and ``f`` on a 16 x 16 sensor grid.
``heat``        ``K ~ U[1, 2]``, implicit Euler from ``exp(-5 |x|^2)``;
                trunk coordinates are ``(x, y, t)``.
"""

import io
import json
import zipfile

import numpy as np
import scipy.sparse.linalg as spla

from .problems import (
    Grid2D,
    ScalarField,
    build_darcy_2d,
    build_jump_darcy,
    build_poisson_1d,
    heat_initial_condition,
    heat_step_system,
    sample_grf,
)

__all__ = [
    "Dataset",
    "make_dataset",
    "poisson1d_dataset",
    "jump_darcy_dataset",
    "darcy_dataset",
    "heat_dataset",
    "sensor_grid",
    "nearest_nodes",
    "darcy_problem",
    "darcy_instance",
    "heat_trajectory",
    "DATASET_KINDS",
]

DARCY_K = {"mean": 0.5, "sigma": 1.0, "ell": 0.1}
DARCY_F = {"mean": 0.0, "sigma": 1.0, "ell": 0.05}


class Dataset:
    """Branch inputs, one shared coordinate set and the targets.

    branch_inputs : list of ``(N_s, ny_b)`` arrays
    coords : ``(n_don, dim)`` array
    targets : ``(N_s, n_don)`` array
    """

    def __init__(self, branch_inputs, coords, targets, meta=None):
        self.branch_inputs = [np.atleast_2d(np.asarray(y, dtype=np.float64)) for y in branch_inputs]
        coords = np.asarray(coords, dtype=np.float64)
        self.coords = coords[:, None] if coords.ndim == 1 else coords
        self.targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        self.meta = dict(meta or {})
        N = self.targets.shape[0]
        if any(y.shape[0] != N for y in self.branch_inputs):
            raise ValueError("every branch needs one input row per sample")
        if self.targets.shape[1] != self.coords.shape[0]:
            raise ValueError("target length must equal the coordinate count")

    @property
    def n_samples(self):
        return self.targets.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset([y[idx] for y in self.branch_inputs], self.coords, self.targets[idx], self.meta)

    def save(self, path):
        """Zip of ``.npy`` members with fixed timestamps (byte-stable)."""
        arrays = {"coords": self.coords, "targets": self.targets}
        for b, y in enumerate(self.branch_inputs):
            arrays[f"branch{b}"] = y
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.save(buf, arrays[name], allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
            zf.writestr(zipfile.ZipInfo("meta.json", date_time=(1980, 1, 1, 0, 0, 0)),
                        json.dumps(self.meta, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path):
        try:
            zf = zipfile.ZipFile(path)
        except (OSError, zipfile.BadZipFile) as exc:
            raise ValueError(f"cannot read dataset {path}: {exc}") from exc
        with zf:
            names = set(zf.namelist())
            if not {"coords.npy", "targets.npy", "meta.json"} <= names:
                raise ValueError(f"{path} is not a dataset file")
            def arr(name):
                return np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
            nb = sum(1 for nm in names if nm.startswith("branch"))
            branches = [arr(f"branch{b}.npy") for b in range(nb)]
            return cls(branches, arr("coords.npy"), arr("targets.npy"), json.loads(zf.read("meta.json")))


def sensor_grid(m=16):
    """Cell-centred ``m x m`` sensor points on the unit square."""
    s = (np.arange(m) + 0.5) / m
    X, Y = np.meshgrid(s, s)
    return np.column_stack([X.ravel(), Y.ravel()])


def nearest_nodes(coords, points):
    """Index of the closest node for every point (ties to the lower id)."""
    d = ((points[:, None, :] - coords[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d, axis=1)


def _direct(prob):
    return spla.spsolve(prob.A.to_scipy().tocsc(), prob.f)


def poisson1d_dataset(n_samples, seed=0, n=100, n_sensors=32, modes=8, decay=2.0):
    rng = np.random.default_rng(seed)
    sensors = np.linspace(0.0, 1.0, n_sensors)
    x = np.arange(1, n + 1) / (n + 1.0)
    m = np.arange(1, modes + 1)
    c = rng.standard_normal((n_samples, modes)) * m ** (-0.5 * decay)
    y = c @ np.sin(np.pi * np.outer(m, sensors))
    f = c @ np.sin(np.pi * np.outer(m, x))
    targets = np.array([_direct(build_poisson_1d(n, fi)) for fi in f]).reshape(n_samples, n)
    dist = {"kind": "sine_series",
            "params": {"modes": modes, "decay": decay, "sensors": sensors.tolist()},
            "note": "f(x) = sum_m c_m sin(m pi x), c_m ~ N(0, m^-decay), sampled at the sensors"}
    meta = {"kind": "poisson1d", "seed": seed, "n": n, "distribution": dist, "d": 1,
            "time_augmented": False}
    return Dataset([y], x[:, None], targets, meta)


def jump_darcy_dataset(n_samples, seed=0, nx=50, low=0.0, high=5.0):
    rng = np.random.default_rng(seed)
    grid = Grid2D.unit_square(nx)
    logk = rng.uniform(low, high, size=(n_samples, 1))
    targets = np.array([_direct(build_jump_darcy(grid, None, 10.0 ** v)) for v in logk[:, 0]])
    dist = {"kind": "uniform", "params": {"low": [low], "high": [high]},
            "note": "branch input is log10 of the channel coefficient"}
    meta = {"kind": "jump_darcy", "seed": seed, "grid": [nx, nx], "distribution": dist, "d": 2,
            "time_augmented": False}
    return Dataset([logk], grid.coords, targets.reshape(n_samples, grid.n), meta)


def darcy_problem(grid, g, f):
    """Darcy system with ``K = exp(g)`` from nodal/cell values ``g`` and ``f``."""
    return build_darcy_2d(grid, ScalarField(np.exp(g), "cell"), f, theta={"kind": "darcy"})


def darcy_instance(grid, seed, sensors=None):
    """Seeded Darcy system on ``grid`` and its branch inputs.

    ``sensors`` are the sensor coordinates stored with a trained model (its
    distribution metadata); each sensor reads the nearest grid node. Returns
    ``(problem, [g_sensors, f_sensors])``.
    """
    rng = np.random.default_rng(seed)
    coords = grid.coords
    g = sample_grf(coords, DARCY_K["mean"], DARCY_K["sigma"], DARCY_K["ell"], rng).values
    f = sample_grf(coords, DARCY_F["mean"], DARCY_F["sigma"], DARCY_F["ell"], rng).values
    prob = darcy_problem(grid, g, f)
    prob.theta["seed"] = seed
    if sensors is None:
        sensors = sensor_grid()
    sidx = nearest_nodes(coords, np.asarray(sensors, dtype=np.float64))
    return prob, [g[sidx], f[sidx]]


def darcy_dataset(n_samples, seed=0, nx=25, n_sensors=16):
    rng = np.random.default_rng(seed)
    grid = Grid2D.unit_square(nx)
    coords = grid.coords
    sidx = nearest_nodes(coords, sensor_grid(n_sensors))
    g = sample_grf(coords, DARCY_K["mean"], DARCY_K["sigma"], DARCY_K["ell"], rng, size=n_samples)
    f = sample_grf(coords, DARCY_F["mean"], DARCY_F["sigma"], DARCY_F["ell"], rng, size=n_samples)
    targets = np.array([_direct(darcy_problem(grid, gi, fi)) for gi, fi in zip(g, f)])
    dist = {"kind": "grf",
            "params": {"sensors": coords[sidx].tolist(),
                       "branches": [dict(DARCY_K, transform="identity"),
                                    dict(DARCY_F, transform="identity")]},
            "note": "branch 0 is log K, branch 1 is f, both GRFs read at the sensor nodes"}
    meta = {"kind": "darcy", "seed": seed, "grid": [nx, nx], "distribution": dist, "d": 2,
            "time_augmented": False}
    return Dataset([g[:, sidx], f[:, sidx]], coords, targets.reshape(n_samples, grid.n), meta)


def heat_trajectory(grid, K, dt, n_steps):
    """Direct implicit-Euler trajectory, shape ``(n_steps, n)`` (steps 1..n)."""
    u = heat_initial_condition(grid.coords)
    out = []
    for _ in range(n_steps):
        u = _direct(heat_step_system(grid, K, dt, u))
        out.append(u)
    return np.array(out)


def heat_dataset(n_samples, seed=0, nx=15, dt=0.02, n_steps=20):
    rng = np.random.default_rng(seed)
    grid = Grid2D.unit_square(nx)
    K = rng.uniform(1.0, 2.0, size=(n_samples, 1))
    t = dt * np.arange(1, n_steps + 1)
    coords = np.column_stack([np.tile(grid.coords, (n_steps, 1)), np.repeat(t, grid.n)])
    targets = np.array([heat_trajectory(grid, k, dt, n_steps).ravel() for k in K[:, 0]])
    dist = {"kind": "uniform", "params": {"low": [1.0], "high": [2.0]},
            "note": "branch input is the diffusivity K"}
    meta = {"kind": "heat", "seed": seed, "grid": [nx, nx], "dt": dt, "n_steps": n_steps,
            "distribution": dist, "d": 2, "time_augmented": True}
    return Dataset([K], coords, targets, meta)


DATASET_KINDS = {
    "poisson1d": poisson1d_dataset,
    "jump_darcy": jump_darcy_dataset,
    "darcy": darcy_dataset,
    "heat": heat_dataset,
}


def make_dataset(kind, n_samples, seed=0, **kw):
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {sorted(DATASET_KINDS)}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return DATASET_KINDS[kind](n_samples, seed=seed, **kw)
