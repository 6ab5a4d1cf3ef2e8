"""CG, PCG and deflated PCG in one routine.

:func:`solve` follows the deflated PCG recurrence line by line:

1. ``A_c = P^T A P`` (held by the :class:`~dpcgnet.deflation.DeflationOperator`)
2. ``u0 = u00 + C (f - A u00)``
3. ``r0 = f - A u0``, ``z0 = M r0``
4. ``p0 = z0 - P mu0`` with ``mu0 = A_c^{-1} P^T A z0``
5. per iteration: ``alpha = <r, z> / <p, A p>``, update ``u`` and ``r``,
   ``z = M r``, ``mu = A_c^{-1} P^T A z``, ``beta = <r_new, z_new> / <r, z>``,
   ``p = beta p + z - P mu``.

Without a deflation operator the steps reduce to PCG, and with the identity
preconditioner to plain CG.
"""

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .precond import IdentityPreconditioner
from .sparse import spmv

__all__ = [
    "SolveOptions",
    "SolveReport",
    "SolverBreakdown",
    "solve",
    "estimate_theta",
    "break_even_point",
    "break_even_k",
    "calibrate_cost_ratio",
    "random_initial_guess",
    "DEFAULT_COST_RATIO",
    "THETA_ANCHORS",
]

# (theta, k*) pairs the cost model is calibrated against
THETA_ANCHORS = ((0.008, 30.0), (0.01, 50.0))


class SolverBreakdown(FloatingPointError):
    """Loss of positive definiteness or non-finite iterates."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


@dataclass
class SolveOptions:
    """Stopping rule and bookkeeping.

    The iteration stops once ``|r| <= abs_tol`` or ``|r| <= rel_tol * ref``.
    ``rel_reference`` picks ``ref``: ``"initial"`` uses ``|r0|``, ``"rhs"``
    uses ``|f|`` and ``"min"`` (default) the smaller of the two, so that the
    returned solution also meets ``|A u - f| <= rel_tol |f|`` when the
    initial guess is far off.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-9
    max_iter: int = None
    record_history: bool = True
    record_iterates: bool = False
    residual_recompute_every: int = 0
    rel_reference: str = "min"
    max_restarts: int = 10
    drift_restart: float = 1e-3

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.rel_reference not in ("min", "initial", "rhs"):
            raise ValueError(f"unknown rel_reference {self.rel_reference!r}")
        if not self.drift_restart > 0:
            raise ValueError("drift_restart must be positive")
        if self.residual_recompute_every < 0:
            raise ValueError("residual_recompute_every must be >= 0")


@dataclass
class SolveReport:
    u: np.ndarray
    iterations: int
    converged: bool
    reason: str
    residual_history: list = field(default_factory=list)
    coarse_orth_history: list = field(default_factory=list)
    deflation_residual_check: float = None
    true_residual: float = None
    rhs_norm: float = None
    initial_residual: float = None
    restarts: int = 0
    coarse_dim: int = 0
    timings: dict = field(default_factory=dict)
    iterates: list = None

    @property
    def relative_residual(self):
        return self.true_residual / self.rhs_norm if self.rhs_norm else float("nan")

    def to_dict(self, include_solution=False, include_timings=False):
        d = {
            "iterations": self.iterations,
            "converged": self.converged,
            "reason": self.reason,
            "true_residual": self.true_residual,
            "relative_residual": self.relative_residual,
            "rhs_norm": self.rhs_norm,
            "initial_residual": self.initial_residual,
            "restarts": self.restarts,
            "coarse_dim": self.coarse_dim,
            "deflation_residual_check": self.deflation_residual_check,
            "residual_history": [float(v) for v in self.residual_history],
        }
        if include_timings:
            d["timings"] = self.timings
        if include_solution:
            d["u"] = self.u.tolist()
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(**kw), indent=1, allow_nan=True)

    def history_csv(self):
        """``iteration,abs_res,rel_res,coarse_orth`` with one row per iterate."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "abs_res", "rel_res", "coarse_orth"])
        ref = self.rhs_norm if self.rhs_norm else 1.0
        for i, res in enumerate(self.residual_history):
            orth = self.coarse_orth_history[i] if i < len(self.coarse_orth_history) else ""
            w.writerow([i, repr(float(res)), repr(float(res) / ref),
                        repr(float(orth)) if orth != "" else ""])
        return buf.getvalue()


def _norm(x):
    return math.sqrt(float(np.dot(x, x)))


def solve(A, f, u00=None, M=None, D=None, opts=None):
    """Solve ``A u = f`` by (deflated) preconditioned CG.

    Parameters
    ----------
    A : SparseMatrix
        SPD system matrix.
    f : ndarray
    u00 : ndarray, optional
        User initial guess (zero if omitted). With ``D`` it is projected
        first.
    M : Preconditioner, optional
        Identity if omitted.
    D : DeflationOperator, optional
        Built from this ``A``.
    opts : SolveOptions

    Returns
    -------
    SolveReport
        ``iterations`` counts search directions taken. The stopping rule is
        re-checked against the true residual ``f - A u`` at exit; if the
        recurrence residual has drifted, the iteration restarts from the true
        residual (at most ``opts.max_restarts`` times).

    Raises
    ------
    SolverBreakdown
        If ``<p, A p> <= 0`` or an iterate turns non-finite.
    """
    opts = SolveOptions() if opts is None else opts
    n = A.n
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (n,):
        raise ValueError(f"len(f) = {f.shape[0]} but A is {n}x{n}")
    u = np.zeros(n) if u00 is None else np.array(u00, dtype=np.float64)
    if u.shape != (n,):
        raise ValueError(f"len(u00) = {u.shape[0]} but A is {n}x{n}")
    if M is None:
        M = IdentityPreconditioner(n)
    if D is not None and D.n != n:
        raise ValueError("deflation operator does not match A")
    max_iter = 10 * n if opts.max_iter is None else opts.max_iter

    t0 = time.perf_counter()
    fnorm = _norm(f)
    if D is not None:
        u = u + D.apply_C(f - spmv(A, u))
    r = f - spmv(A, u)
    r0norm = _norm(r)
    if not np.isfinite(r0norm):
        raise SolverBreakdown("non-finite initial residual (check f and u00)", 0)
    ref = {"initial": r0norm, "rhs": fnorm, "min": min(r0norm, fnorm)}[opts.rel_reference]
    thresh = max(opts.abs_tol, opts.rel_tol * ref)
    t_setup = time.perf_counter() - t0

    hist, orth_hist = [], []
    iterates = [u.copy()] if opts.record_iterates else None
    orth_max = 0.0

    def record(res):
        """Store ``|r|``; return ``|P^T r|`` (0 without deflation)."""
        nonlocal orth_max
        if opts.record_history:
            hist.append(res)
        if D is None:
            return 0.0
        o = _norm(D.restrict(r))
        orth_max = max(orth_max, o / (fnorm if fnorm > 0 else 1.0))
        if opts.record_history:
            orth_hist.append(o / (fnorm if fnorm > 0 else 1.0))
        return o

    def direction(z):
        if D is None:
            return z
        mu = D.coarse_solve(D.AP.T @ z)
        return z - D.prolong(mu)

    it = 0
    restarts = 0
    reason = None
    res = r0norm
    record(res)
    t1 = time.perf_counter()
    while True:
        # (re)start the recurrence from the current residual
        z = M.apply(r)
        rz = float(np.dot(r, z))
        p = direction(z)
        while res > thresh and it < max_iter:
            if rz == 0.0:
                reason = "zero <r, z>"
                break
            w = spmv(A, p)
            pAp = float(np.dot(p, w))
            if not pAp > 0.0:
                if not np.isfinite(pAp):
                    raise SolverBreakdown(f"non-finite <p, Ap> at iteration {it + 1}", it + 1)
                raise SolverBreakdown(
                    f"<p, Ap> = {pAp:.3e} <= 0 at iteration {it + 1}: matrix or "
                    "preconditioner is not SPD", it + 1)
            alpha = rz / pAp
            u += alpha * p
            r -= alpha * w
            it += 1
            if opts.residual_recompute_every and it % opts.residual_recompute_every == 0:
                r = f - spmv(A, u)
            res = _norm(r)
            if not np.isfinite(res):
                raise SolverBreakdown(f"non-finite residual at iteration {it}", it)
            drift = record(res)
            if opts.record_iterates:
                iterates.append(u.copy())
            if res <= thresh:
                break
            if drift > opts.drift_restart * res:
                reason = "drift"
                break
            z = M.apply(r)
            rz_new = float(np.dot(r, z))
            if rz_new == 0.0:
                reason = "zero <r, z>"
                break
            beta = rz_new / rz
            rz = rz_new
            p = beta * p + direction(z)
        r_true = f - spmv(A, u)
        true_res = _norm(r_true)
        if true_res <= thresh or reason == "zero <r, z>":
            converged = True
            if reason is None:
                reason = "absolute tolerance" if true_res <= opts.abs_tol else "relative tolerance"
            break
        if it >= max_iter:
            converged, reason = False, "max_iter reached"
            break
        if restarts >= opts.max_restarts:
            converged, reason = False, "recurrence residual drifted from true residual"
            break
        restarts += 1
        reason = None
        if D is not None:
            u += D.apply_C(r_true)
            r = f - spmv(A, u)
        else:
            r = r_true
        res = _norm(r)
    t_iter = time.perf_counter() - t1

    return SolveReport(
        u=u,
        iterations=it,
        converged=converged,
        reason=reason,
        residual_history=hist,
        coarse_orth_history=orth_hist,
        deflation_residual_check=orth_max if D is not None else None,
        true_residual=true_res,
        rhs_norm=fnorm,
        initial_residual=r0norm,
        restarts=restarts,
        coarse_dim=0 if D is None else D.coarse_dim,
        timings={"setup": t_setup, "iterate": t_iter},
        iterates=iterates,
    )


def random_initial_guess(n, seed):
    """Standard normal vector scaled to unit 2-norm."""
    v = np.random.default_rng(seed).standard_normal(n)
    return v / np.linalg.norm(v)


# ------------------------------------------------------------ break-even

def estimate_theta(n_pcg, n_dpcg, k):
    """Average relative iteration reduction per deflation vector,
    ``(N_pcg - N_dpcg) / (k N_pcg)``; negative when deflation hurt."""
    if n_pcg < 1 or k < 1:
        raise ValueError("need n_pcg >= 1 and k >= 1")
    return (n_pcg - n_dpcg) / (k * n_pcg)


def calibrate_cost_ratio(anchors=THETA_ANCHORS):
    """Cost ratio whose break-even points best fit ``(theta, k*)`` anchors.

    The model gives ``k* = 1/c - 1/theta``, so the least-squares fit of
    ``1/c`` is the mean of ``k* + 1/theta`` over the anchors.
    """
    inv_c = float(np.mean([k + 1.0 / th for th, k in anchors]))
    return 1.0 / inv_c


DEFAULT_COST_RATIO = calibrate_cost_ratio()


def break_even_point(theta, cost_ratio=DEFAULT_COST_RATIO):
    """Continuous break-even size ``k* = (theta - c) / (theta c)``, clipped at 0.

    ``c`` is the per-iteration overhead of one deflation vector relative to
    one PCG iteration. Equivalently ``k* = 1/c - 1/theta``, so a larger
    reduction per vector or a cheaper vector pushes the point out.
    """
    if not cost_ratio > 0:
        raise ValueError("cost_ratio must be positive")
    if not theta > 0:
        raise ValueError("theta must be positive")
    return max(0.0, (theta - cost_ratio) / (theta * cost_ratio))


def break_even_k(theta, cost_ratio=DEFAULT_COST_RATIO):
    """Smallest integer ``k`` beyond the break-even point, ``floor(k*) + 1``.

    Returns 0 when deflation never pays (``theta <= cost_ratio``).
    """
    k_star = break_even_point(theta, cost_ratio)
    if k_star == 0.0:
        return 0
    return int(math.floor(k_star)) + 1
