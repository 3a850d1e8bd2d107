"""
Primal-dual interior-point solver for convex QCQPs with explicit linear
equalities:

    min x'P0x + q0'x + r0   s.t.   A x = b,  G x <= h,  x'P_i x + q_i'x + r_i <= 0.

Each iteration takes a Newton step on the modified KKT residual
(r_dual, r_cent, r_pri) at barrier parameter t = mu * m / eta, where eta is
the surrogate duality gap, and backtracks on the residual norm. The reduced
system [[H, A'], [A, 0]] is Jacobi-scaled and solved densely. A box
|x_j| <= variable_bound is always appended so the iterates stay bounded.
"""
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .models import SolverSettings
from .relaxation import ConvexProgram, QuadConstraint

logger = logging.getLogger(__name__)

FRACTION_TO_BOUNDARY = 0.99
ARMIJO = 0.01
BACKTRACK = 0.5
STALL_STEP = 1e-8
SLOW_STEP = 1e-3
# An iterate whose steps have shrunk below SLOW_STEP still counts as optimal when
# its gap is within this factor of the target and its stationarity residual is
# below STALL_STATIONARITY.
PRECISION_FLOOR = 1e3
STALL_STATIONARITY = 1e-7
STATIONARITY_CAP = 1e-6
# Phase I declares infeasibility once the auxiliary slack is stuck above this.
INFEASIBLE_CLEARANCE = 1e-4


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    primal: float
    gap: float


@dataclass(frozen=True)
class Solution:
    status: SolveStatus
    x: np.ndarray = field(repr=False)
    objective: float
    kkt: KktReport
    iterations: int
    message: str = ""


class _NumericalTrouble(Exception):
    pass


class _Inequalities:
    """All inequality constraints f_i(x) <= 0 of a program, box included."""

    def __init__(self, prog: ConvexProgram, bound: float):
        n = prog.n_vars
        self.g = np.vstack([prog.g_ineq, np.eye(n), -np.eye(n)])
        self.h = np.concatenate([prog.h_ineq, np.full(2 * n, bound)])
        self.quad = prog.quad

    @property
    def count(self) -> int:
        return len(self.h) + len(self.quad)

    def values(self, x: np.ndarray) -> np.ndarray:
        lin = self.g @ x - self.h
        if not self.quad:
            return lin
        return np.concatenate([lin, [c.value(x) for c in self.quad]])

    def gradients(self, x: np.ndarray) -> np.ndarray:
        rows = [self.g] + [(2 * c.p @ x + c.q)[None, :] for c in self.quad]
        return np.vstack(rows)

    def curvature(self, lam: np.ndarray) -> np.ndarray:
        """sum_i lam_i * Hessian(f_i); only the quadratic rows contribute."""
        n = self.g.shape[1]
        hess = np.zeros((n, n))
        for c, w in zip(self.quad, lam[len(self.h):]):
            hess += 2 * w * c.p
        return hess

    def max_step(self, x: np.ndarray, dx: np.ndarray) -> float:
        """Largest s with every f_i(x + s*dx) < 0 (inf when unbounded)."""
        f_lin = self.g @ x - self.h
        slope = self.g @ dx
        mask = slope > 0
        s = np.min(-f_lin[mask] / slope[mask]) if np.any(mask) else np.inf
        for c in self.quad:
            a = float(dx @ c.p @ dx)
            b = float((2 * c.p @ x + c.q) @ dx)
            f = c.value(x)
            if a > 0:
                disc = np.sqrt(b * b - 4 * a * f)
                root = -2 * f / (b + disc) if b >= 0 else (-b + disc) / (2 * a)
            elif b > 0:
                root = -f / b
            else:
                continue
            s = min(s, root)
        return s


@dataclass
class _Iterate:
    x: np.ndarray
    lam: np.ndarray
    nu: np.ndarray


def _objective(prog: ConvexProgram, x: np.ndarray) -> float:
    return float(x @ prog.p0 @ x + prog.q0 @ x + prog.r0)


def _objective_gradient(prog: ConvexProgram, x: np.ndarray) -> np.ndarray:
    return 2 * prog.p0 @ x + prog.q0


def _residuals(prog, ineq, it: _Iterate, t: float):
    f = ineq.values(it.x)
    df = ineq.gradients(it.x)
    r_dual = _objective_gradient(prog, it.x) + df.T @ it.lam + prog.a_eq.T @ it.nu
    r_cent = -it.lam * f - 1.0 / t
    r_pri = prog.a_eq @ it.x - prog.b_eq
    return f, df, r_dual, r_cent, r_pri


def _residual_norm(prog, ineq, it: _Iterate, t: float) -> float:
    f = ineq.values(it.x)
    if np.any(f >= 0):
        return np.inf
    _, _, r_dual, r_cent, r_pri = _residuals(prog, ineq, it, t)
    return float(np.sqrt(r_dual @ r_dual + r_cent @ r_cent + r_pri @ r_pri))


def _newton_direction(prog, ineq, it: _Iterate, f, df, r_dual, r_cent, r_pri):
    n = prog.n_vars
    m = prog.a_eq.shape[0]
    weights = it.lam / -f
    hess = 2 * prog.p0 + ineq.curvature(it.lam) + (df.T * weights) @ df
    rhs = -(r_dual + df.T @ (r_cent / f))

    scale = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1.0))
    top = hess * np.outer(scale, scale)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            if m == 0:
                y = linalg.solve(top, scale * rhs, assume_a="sym")
                d_nu = np.zeros(0)
            else:
                a_scaled = prog.a_eq * scale
                kkt = np.block([[top, a_scaled.T], [a_scaled, np.zeros((m, m))]])
                sol = linalg.solve(kkt, np.concatenate([scale * rhs, -r_pri]), assume_a="sym")
                y, d_nu = sol[:n], sol[n:]
    except (linalg.LinAlgError, ValueError) as exc:
        raise _NumericalTrouble(f"KKT solve failed: {exc}") from exc

    dx = scale * y
    d_lam = (r_cent - it.lam * (df @ dx)) / f
    if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(d_lam)) and np.all(np.isfinite(d_nu))):
        raise _NumericalTrouble("non-finite Newton direction")
    return dx, d_lam, d_nu


def _step_length(prog, ineq, it: _Iterate, dx, d_lam, d_nu, t: float, norm: float) -> float:
    """Backtracking step: keep lam > 0 and f(x) < 0, then demand residual decrease."""
    shrinking = d_lam < 0
    limit = ineq.max_step(it.x, dx)
    if np.any(shrinking):
        limit = min(limit, float(np.min(-it.lam[shrinking] / d_lam[shrinking])))
    step = min(1.0, FRACTION_TO_BOUNDARY * limit)
    while step > STALL_STEP:
        trial = _Iterate(it.x + step * dx, it.lam + step * d_lam, it.nu + step * d_nu)
        if _residual_norm(prog, ineq, trial, t) <= (1 - ARMIJO * step) * norm:
            return step
        step *= BACKTRACK
    return 0.0


@dataclass(frozen=True)
class _Run:
    status: SolveStatus
    iterate: _Iterate
    iterations: int
    kkt: KktReport
    message: str = ""


def _primal_dual(prog: ConvexProgram, x0: np.ndarray, settings: SolverSettings,
                 stop: Optional[Callable[[np.ndarray], bool]] = None) -> _Run:
    ineq = _Inequalities(prog, settings.variable_bound)
    f0 = ineq.values(x0)
    if np.any(f0 >= 0):
        raise _NumericalTrouble("start point is not strictly feasible")
    m = ineq.count
    it = _Iterate(x=x0, lam=1.0 / (settings.t0 * -f0), nu=np.zeros(prog.a_eq.shape[0]))

    feas_tol = settings.tol_feas * max(1.0, float(np.max(np.abs(prog.b_eq), initial=0.0)))
    iterations = 0
    while True:
        f = ineq.values(it.x)
        eta = float(-f @ it.lam)
        t = settings.mu * m / eta
        f, df, r_dual, r_cent, r_pri = _residuals(prog, ineq, it, t)
        grad_scale = max(1.0, float(np.max(np.abs(_objective_gradient(prog, it.x)))))
        gap_tol = settings.tol_gap * max(1.0, abs(_objective(prog, it.x)))
        stationarity = float(np.max(np.abs(r_dual)))
        primal = float(np.max(np.abs(r_pri), initial=0.0))
        kkt = KktReport(stationarity=stationarity, primal=primal, gap=eta)

        if primal <= feas_tol and stationarity <= settings.tol_feas * grad_scale and eta <= gap_tol:
            return _Run(SolveStatus.OPTIMAL, it, iterations, kkt)
        if iterations >= settings.max_iters:
            return _Run(SolveStatus.ITER_LIMIT, it, iterations, kkt, "iteration budget exhausted")

        norm = float(np.sqrt(r_dual @ r_dual + r_cent @ r_cent + r_pri @ r_pri))
        dx, d_lam, d_nu = _newton_direction(prog, ineq, it, f, df, r_dual, r_cent, r_pri)
        step = _step_length(prog, ineq, it, dx, d_lam, d_nu, t, norm)
        logger.debug(f"iter={iterations + 1} t={t:.3e} gap={eta:.3e} step={step:.3e}")
        floor_stationarity = min(STATIONARITY_CAP, STALL_STATIONARITY * grad_scale)
        at_floor = (primal <= feas_tol and stationarity <= floor_stationarity
                    and eta <= PRECISION_FLOOR * gap_tol)
        if at_floor and step < SLOW_STEP:
            return _Run(SolveStatus.OPTIMAL, it, iterations, kkt, "stopped at the precision floor")
        if step == 0.0:
            return _Run(SolveStatus.NUMERICAL_FAILURE, it, iterations, kkt,
                        f"line search stalled at gap {eta:.3e}, stationarity {stationarity:.3e}")

        it = _Iterate(it.x + step * dx, it.lam + step * d_lam, it.nu + step * d_nu)
        iterations += 1
        if stop is not None and stop(it.x):
            return _Run(SolveStatus.OPTIMAL, it, iterations, kkt, "stop condition reached")


def _phase1_program(prog: ConvexProgram, bound: float) -> ConvexProgram:
    """Variables (x, s): min s  s.t.  f_i(x) - s <= 0,  -s <= 1,  A x = b."""
    n = prog.n_vars
    lin = np.vstack([prog.g_ineq, np.eye(n), -np.eye(n)])
    g = np.hstack([lin, -np.ones((lin.shape[0], 1))])
    g = np.vstack([g, np.eye(1, n + 1, n) * -1.0])
    h = np.concatenate([prog.h_ineq, np.full(2 * n, bound), [1.0]])
    quad = []
    for c in prog.quad:
        p = np.zeros((n + 1, n + 1))
        p[:n, :n] = c.p
        quad.append(QuadConstraint(p=p, q=np.append(c.q, -1.0), r=c.r))
    return ConvexProgram(
        n_vars=n + 1,
        q0=np.eye(1, n + 1, n).ravel(),
        a_eq=np.hstack([prog.a_eq, np.zeros((prog.a_eq.shape[0], 1))]),
        b_eq=prog.b_eq,
        g_ineq=g,
        h_ineq=h,
        quad=tuple(quad),
    )


def solve_phase1(prog: ConvexProgram, settings: SolverSettings = None) -> Solution:
    """
    Find a strictly feasible start. Status Optimal here means x satisfies every
    inequality with slack >= slack_margin and A x = b; Infeasible carries the
    smallest worst violation reached in the message.
    """
    settings = settings or SolverSettings()
    margin = settings.slack_margin
    ineq = _Inequalities(prog, settings.variable_bound)

    if prog.a_eq.shape[0]:
        try:
            x0 = np.linalg.lstsq(prog.a_eq, prog.b_eq, rcond=None)[0]
        except np.linalg.LinAlgError as exc:
            return _failure(prog, SolveStatus.NUMERICAL_FAILURE, str(exc))
        if np.max(np.abs(prog.a_eq @ x0 - prog.b_eq)) > 1e-10 * max(1.0, np.max(np.abs(prog.b_eq))):
            return _failure(prog, SolveStatus.INFEASIBLE, "equality constraints are inconsistent", x0)
    else:
        x0 = np.zeros(prog.n_vars)

    f0 = ineq.values(x0)
    worst = float(f0.max())
    report = KktReport(stationarity=0.0, primal=0.0, gap=0.0)
    if worst < -margin:
        return Solution(SolveStatus.OPTIMAL, x0, _objective(prog, x0), report, 0, "start point is interior")

    aux = _phase1_program(prog, settings.variable_bound)
    start = np.append(x0, worst + 1.0)
    n = prog.n_vars
    try:
        run = _primal_dual(aux, start, settings, stop=lambda z: z[n] < -margin)
    except _NumericalTrouble as exc:
        return _failure(prog, SolveStatus.NUMERICAL_FAILURE, str(exc), x0)

    x = run.iterate.x[:n]
    worst = float(ineq.values(x).max())
    if worst < -margin:
        return Solution(SolveStatus.OPTIMAL, x, _objective(prog, x), report, run.iterations, "strictly feasible")
    # s - gap bounds the auxiliary optimum from below once stationarity holds
    clearance = INFEASIBLE_CLEARANCE * max(1.0, float(np.max(np.abs(prog.h_ineq), initial=0.0)))
    certified = (run.kkt.stationarity <= STATIONARITY_CAP
                 and run.iterate.x[n] - run.kkt.gap > clearance)
    stalled_above = run.status is SolveStatus.NUMERICAL_FAILURE and worst > clearance
    if run.status is SolveStatus.OPTIMAL or stalled_above or certified:
        return _failure(prog, SolveStatus.INFEASIBLE, f"no strictly feasible point; worst violation {worst:.3e}",
                        x, run.iterations)
    return _failure(prog, run.status, f"phase I stopped at worst violation {worst:.3e}: {run.message}",
                    x, run.iterations)


def _failure(prog, status, message, x=None, iterations=0) -> Solution:
    x = np.zeros(prog.n_vars) if x is None else x
    report = KktReport(stationarity=np.inf, primal=np.inf, gap=np.inf)
    return Solution(status, x, _objective(prog, x), report, iterations, message)


def solve(prog: ConvexProgram, settings: SolverSettings = None) -> Solution:
    settings = settings or SolverSettings()
    start = solve_phase1(prog, settings)
    if start.status is not SolveStatus.OPTIMAL:
        logger.info(f"Phase I ended with {start.status.value}: {start.message}")
        return start

    try:
        run = _primal_dual(prog, start.x, settings)
    except _NumericalTrouble as exc:
        return _failure(prog, SolveStatus.NUMERICAL_FAILURE, str(exc), start.x, start.iterations)

    x = run.iterate.x
    logger.info(f"Solver finished: {run.status.value} after {run.iterations} iterations, "
                f"objective {_objective(prog, x):.9g}, gap {run.kkt.gap:.3e}")
    return Solution(run.status, x, _objective(prog, x), run.kkt, run.iterations, run.message)
