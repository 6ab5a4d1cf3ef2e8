"""Glue between problems, surrogate, grouping, deflation and solver.

One :class:`Case` describes a benchmark system together with what the
surrogate needs to see (branch input, trunk coordinates). The helpers here
are shared by the command-line tool and the demos.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import datasets
from .deflation import assemble_deflation, nico_vectors, rs_vectors, smallest_eigvecs, tb_vectors
from .grouping import IndexSets, cluster_features, groups_from_labels, kmeans_groups, partition_graph
from .krylov import SolveOptions, SolverBreakdown, estimate_theta, random_initial_guess, solve
from .onet import deeponet_eval
from .precond import build_preconditioner
from .problems import (
    Grid2D,
    build_jump_darcy,
    build_poisson_1d,
    build_darcy_2d,
    heat_initial_condition,
    heat_step_system,
)
from .sparse import NotSPDError

__all__ = [
    "Case",
    "PROBLEM_KINDS",
    "make_cases",
    "make_groups",
    "make_basis",
    "run_solve",
    "run_bench",
    "BENCH_COLUMNS",
]

PROBLEM_KINDS = ("poisson1d", "poisson2d", "darcy", "jump_darcy", "heat")
DEFLATION_SOURCES = ("none", "nico", "tb", "rs", "eig")
GROUPINGS = ("cd", "dd", "cl")


@dataclass
class Case:
    """One linear system plus the surrogate view of it."""

    kind: str
    prob: object
    branch_input: list = None
    trunk_coords: np.ndarray = None
    labels: np.ndarray = None
    step: int = None
    params: dict = field(default_factory=dict)

    @property
    def A(self):
        return self.prob.A

    @property
    def f(self):
        return self.prob.f


def _direct(prob):
    return spla.spsolve(prob.A.to_scipy().tocsc(), prob.f)


def make_cases(kind, nx=50, seed=0, model=None, K=None, dt=0.02, n_steps=20):
    """Systems for one parameter draw: a single case, or one per time step.

    ``K`` fixes the channel coefficient (``jump_darcy``) or the diffusivity
    (``heat``); otherwise it is drawn from ``seed``. Heat steps advance with
    direct solves so every solver configuration sees the same sequence.
    """
    if kind not in PROBLEM_KINDS:
        raise ValueError(f"unknown problem {kind!r}; choose from {', '.join(PROBLEM_KINDS)}")
    dist = None if model is None else model.branch_input_distribution
    rng = np.random.default_rng(seed)
    if kind == "poisson1d":
        params = dist["params"] if dist and dist.get("kind") == "sine_series" else \
            {"modes": 8, "decay": 2.0, "sensors": np.linspace(0, 1, 32).tolist()}
        m = np.arange(1, int(params["modes"]) + 1)
        c = rng.standard_normal(m.size) * m ** (-0.5 * float(params["decay"]))
        x = np.arange(1, nx + 1) / (nx + 1.0)
        prob = build_poisson_1d(nx, np.sin(np.pi * np.outer(x, m)) @ c)
        y = np.sin(np.pi * np.outer(np.asarray(params["sensors"]), m)) @ c
        return [Case(kind, prob, [y], prob.coords, params={"seed": seed})]
    grid = Grid2D.unit_square(nx)
    if kind == "poisson2d":
        prob = build_darcy_2d(grid, 1.0, 1.0, theta={"kind": "poisson2d"})
        return [Case(kind, prob, None, prob.coords, params={"seed": seed})]
    if kind == "darcy":
        sensors = dist["params"]["sensors"] if dist and dist.get("kind") == "grf" else None
        prob, y = datasets.darcy_instance(grid, seed, sensors)
        return [Case(kind, prob, y, prob.coords, params={"seed": seed})]
    if kind == "jump_darcy":
        logk = np.log10(K) if K is not None else rng.uniform(0.0, 5.0)
        prob = build_jump_darcy(grid, None, 10.0 ** logk)
        return [Case(kind, prob, [np.array([logk])], prob.coords,
                     labels=prob.theta["mask"].astype(np.int64),
                     params={"seed": seed, "K_channel": 10.0 ** logk})]
    # heat
    Kh = float(K) if K is not None else rng.uniform(1.0, 2.0)
    u = heat_initial_condition(grid.coords)
    cases = []
    for step in range(1, n_steps + 1):
        prob = heat_step_system(grid, Kh, dt, u)
        tc = np.column_stack([grid.coords, np.full(grid.n, dt * step)])
        cases.append(Case(kind, prob, [np.array([Kh])], tc, step=step,
                          params={"seed": seed, "K": Kh, "dt": dt}))
        u = _direct(prob)
    return cases


def make_groups(case, grouping, S, model=None, seed=0):
    """Index sets from computational-domain labels, bisection, or k-means on
    the surrogate prediction."""
    n = case.prob.n
    if grouping == "cd":
        if case.labels is None:
            return IndexSets([np.arange(n)], n)
        return groups_from_labels(case.labels)
    if grouping == "dd":
        return partition_graph(case.A, case.prob.coords, S)
    if grouping == "cl":
        if model is None or case.branch_input is None:
            raise ValueError("cl grouping needs a surrogate model with a branch input for this problem")
        pred = deeponet_eval(model, case.branch_input, case.trunk_coords)
        return kmeans_groups(cluster_features(pred, case.prob.coords), S, seed=seed)
    raise ValueError(f"unknown grouping {grouping!r}; choose from {', '.join(GROUPINGS)}")


def make_basis(case, source, k, model=None, seed=0, M=None, nico_kind=None, k_wave=1.0):
    if source in ("tb", "rs") and model is None:
        raise ValueError(f"deflation source {source!r} needs --model")
    if source != "nico" and k < 1:
        raise ValueError("k must be >= 1")
    if source == "nico":
        kind = nico_kind or ("helmholtz" if case.kind == "heat" else "constant")
        return nico_vectors(kind, case.prob.coords, {"k_wave": k_wave})
    if source == "tb":
        return tb_vectors(model, case.trunk_coords, k, seed)
    if source == "rs":
        if case.branch_input is None:
            raise ValueError(f"problem {case.kind!r} has no branch input for recycled solutions")
        return rs_vectors(model, case.trunk_coords, k, case.branch_input, seed)
    if source == "eig":
        from .deflation import TentativeBasis

        _, V = smallest_eigvecs(case.A, M, k)
        return TentativeBasis(V, "eig", {"k": k})
    raise ValueError(f"unknown deflation source {source!r}; choose from {', '.join(DEFLATION_SOURCES)}")


def _precond(case, kind, S, omega=1.0, overlap=1, shift=0.0):
    subs = partition_graph(case.A, case.prob.coords, S) if kind == "asm" else None
    return build_preconditioner(case.A, kind, omega=omega, subdomains=subs, overlap=overlap, shift=shift)


def run_solve(case, precond="icc", source="none", k=5, grouping="dd", S=1, model=None,
              basis_seed=0, init_seed=0, group_seed=0, opts=None, omega=1.0, overlap=1,
              shift=0.0, nico_kind=None, k_wave=1.0):
    """Build preconditioner and deflation for ``case`` and solve it."""
    M = _precond(case, precond, S, omega, overlap, shift)
    D = None
    if source != "none":
        groups = make_groups(case, grouping, S, model, group_seed)
        V = make_basis(case, source, k, model, basis_seed, M, nico_kind, k_wave)
        D = assemble_deflation(case.A, V, groups)
    u00 = random_initial_guess(case.prob.n, init_seed)
    return solve(case.A, case.f, u00, M, D, opts)


BENCH_COLUMNS = ["problem", "nx", "precond", "source", "grouping", "S", "k", "step",
                 "repetitions", "seed", "mean_iterations", "theta", "iterations", "status"]


def _fmt(x):
    return repr(float(x))


def run_bench(problem="jump_darcy", nx=50, precond="icc", sources=("none",), ks=(5,),
              Ss=(4,), grouping="cl", repetitions=10, seed=0, model=None, K=None,
              dt=0.02, n_steps=20, opts=None, omega=1.0, overlap=1, shift=0.0,
              nico_kind=None, k_wave=1.0):
    """Sweep ``sources x S x k`` and return CSV rows (dicts, deterministic order).

    Repetition ``r`` uses parameter seed ``seed + r``, initial-guess seed
    ``seed + 1000 + r`` and basis seed ``seed + r``. Each ``(precond, S)`` gets
    an undeflated baseline that feeds the ``theta`` column. Failed solves
    are recorded as ``did not converge``. Time-dependent problems add one row
    per step and a ``step = all`` row averaged over all steps.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if any(s not in DEFLATION_SOURCES for s in sources):
        raise ValueError(f"unknown deflation source in {sources}")
    cases = [make_cases(problem, nx, seed + r, model, K, dt, n_steps) for r in range(repetitions)]
    n_steps_eff = len(cases[0])

    def counts(source, S, k):
        table = np.full((repetitions, n_steps_eff), -1, dtype=np.int64)
        for r in range(repetitions):
            for j, case in enumerate(cases[r]):
                try:
                    rep = run_solve(case, precond, source, k, grouping, S, model,
                                    basis_seed=seed + r, init_seed=seed + 1000 + r,
                                    group_seed=0, opts=opts, omega=omega, overlap=overlap,
                                    shift=shift, nico_kind=nico_kind, k_wave=k_wave)
                    if rep.converged:
                        table[r, j] = rep.iterations
                except (SolverBreakdown, NotSPDError, FloatingPointError, np.linalg.LinAlgError):
                    pass
        return table

    rows = []
    baselines = {}
    for S in Ss:
        if S not in baselines:
            baselines[S] = counts("none", S, 0)
        for source in sources:
            for k in ([0] if source in ("none", "nico") else ks):
                table = baselines[S] if source == "none" else counts(source, S, k)
                base = baselines[S]
                steps = list(range(n_steps_eff)) if problem == "heat" else []
                for j in steps + [None]:
                    col = table if j is None else table[:, j:j + 1]
                    bcol = base if j is None else base[:, j:j + 1]
                    ok = bool(np.all(col >= 0))
                    mean = col.mean() if ok else None
                    theta = ""
                    kk = k if source != "nico" else None
                    if ok and source != "none" and np.all(bcol >= 0):
                        kd = kk if kk else _nico_width(cases[0][0], nico_kind)
                        theta = _fmt(estimate_theta(bcol.mean(), mean, kd))
                    rows.append({
                        "problem": problem, "nx": nx, "precond": precond, "source": source,
                        "grouping": "" if source == "none" else grouping, "S": S,
                        "k": "" if kk is None or source == "none" else kk,
                        "step": ("all" if j is None else j + 1) if problem == "heat" else "",
                        "repetitions": repetitions, "seed": seed,
                        "mean_iterations": _fmt(mean) if ok else "--",
                        "theta": theta,
                        "iterations": _per_run(col),
                        "status": "ok" if ok else "did not converge",
                    })
    return rows


def _per_run(col):
    """Semicolon list of per-repetition counts (step means when several)."""
    out = []
    for row in col:
        if np.any(row < 0):
            out.append("--")
        elif row.size == 1:
            out.append(str(int(row[0])))
        else:
            out.append(_fmt(row.mean()))
    return ";".join(out)


def _nico_width(case, nico_kind):
    kind = nico_kind or ("helmholtz" if case.kind == "heat" else "constant")
    return nico_vectors(kind, case.prob.coords[:1]).k
