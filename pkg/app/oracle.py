"""
Independent steady-state check of a dispatch.

Given converter gains, every branch obeys its averaged circuit equations
exactly (Vs on the curve, V'' = g*V', tight power balance); the load voltage
is the root of the KCL residual sum(I_k) - V_load/R_load. Nested bracketing
root finds are used throughout, so convergence does not depend on a start
point.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import AllInfeasible, InfeasibleError, NegativeBranchCurrent, NoConvergence
from .lossmodel import branch_loss, loss_coefficients, smallest_positive_root
from .models import Branch, BranchState, Deviation, DispatchPlan, NetworkSpec, OperatingPoint, SteadyStateResult
from .netmodel import pwl_eval
from .posttighten import plan_cost
from .relaxation import resolve_branch_limits

logger = logging.getLogger(__name__)

XTOL = 1e-13
RTOL = 4 * np.finfo(float).eps
SCAN_POINTS = 256
LOAD_SCAN_POINTS = 128
RESIDUAL_TOL = 1e-9
DEVIATION_EPS = 1e-9
COMPARED_FIELDS = ("i_s", "i_out", "v_in", "v_out")


@dataclass(frozen=True)
class _BranchSolution:
    vs: float
    v_in: float
    i_s: float
    i_out: float
    residual: float = 0.0
    iterations: int = 0

    @property
    def blocked(self) -> bool:
        return self.i_out <= 0


_BLOCKED = _BranchSolution(vs=0.0, v_in=0.0, i_s=0.0, i_out=0.0)


def _constant_input(b: Branch) -> bool:
    return b.rs == 0 and bool(np.all(b.curve.betas == 0))


def _v_in(b: Branch, i_s):
    return pwl_eval(b.curve, i_s) - b.rs * i_s


def _cross_current(b: Branch, target: float) -> float:
    """Is at which V'(Is) falls to `target`; V' is strictly decreasing when not constant."""
    hi = 1.0
    for _ in range(200):
        if _v_in(b, hi) < target:
            break
        hi *= 2
    else:
        raise NoConvergence(f"branch {b.name}: input voltage never falls below {target}")
    return brentq(lambda x: _v_in(b, x) - target, 0.0, hi, xtol=XTOL, rtol=RTOL)


def _balance_from_output(b: Branch, i_out: float, v_load: float, on_curve: float) -> float:
    """Smallest Is with on_curve*Is = Q(Is, I) + V_load*I for a fixed output current."""
    coef = loss_coefficients(b, v_load)
    try:
        return smallest_positive_root(
            coef.ss, coef.si * i_out + coef.s - on_curve, coef.ii * i_out ** 2 + coef.i * i_out + v_load * i_out)
    except InfeasibleError as exc:
        raise NoConvergence(f"branch {b.name}: power balance has no root at I={i_out}") from exc


def _solve_branch(b: Branch, gain: float, v_load: float) -> _BranchSolution:
    """Operating point of one branch for a given load voltage; blocked when it cannot deliver."""
    gamma = b.curve.open_circuit_voltage
    if gain * gamma <= v_load:
        return _BLOCKED
    coef = loss_coefficients(b, v_load)

    if _constant_input(b):
        # R_cable > 0 here; zero-cable constant branches pin V_load and are handled by the caller.
        i_out = (gain * gamma - v_load) / b.r_cable
        i_s = _balance_from_output(b, i_out, v_load, gamma)
        return _BranchSolution(vs=gamma, v_in=gamma, i_s=i_s, i_out=i_out)

    if b.r_cable == 0:
        i_s = _cross_current(b, v_load / gain)
        on_curve = pwl_eval(b.curve, i_s)
        denominator = coef.si * i_s + coef.i + v_load
        i_out = (on_curve * i_s - coef.ss * i_s ** 2 - coef.s * i_s) / denominator
        if i_out <= 0:
            return _BLOCKED
        return _BranchSolution(vs=on_curve, v_in=on_curve - b.rs * i_s, i_s=i_s, i_out=i_out)

    def output(i_s):
        return (gain * _v_in(b, i_s) - v_load) / b.r_cable

    def residual(i_s):
        i_out = output(i_s)
        return pwl_eval(b.curve, i_s) * i_s - coef.evaluate(i_s, i_out) - v_load * i_out

    upper = _cross_current(b, v_load / gain)
    grid = np.linspace(0.0, upper, SCAN_POINTS)
    values = residual(grid)
    rising = np.flatnonzero((values[:-1] < 0) & (values[1:] >= 0))
    if rising.size == 0:
        return _BLOCKED
    lo, hi = grid[rising[0]], grid[rising[0] + 1]
    i_s, info = brentq(residual, lo, hi, xtol=XTOL, rtol=RTOL, full_output=True)
    i_out = output(i_s)
    on_curve = pwl_eval(b.curve, i_s)
    scale = max(on_curve * i_s, 1.0)
    return _BranchSolution(vs=on_curve, v_in=on_curve - b.rs * i_s, i_s=i_s, i_out=i_out,
                           residual=abs(residual(i_s)) / scale, iterations=info.iterations)


def _bracket_load_voltage(kcl_residual, v_hi: float) -> Tuple[float, float]:
    """
    Highest interval [v, v_up] below v_hi where the KCL residual turns from
    surplus to deficit. Every branch is blocked at v_hi and again at low
    voltages, where no source can cover the losses, so the residual is
    negative at both ends of (0, v_hi] and the operating point is the upper
    crossing of the window in between.
    """
    v_up = v_hi
    for v in np.linspace(v_hi, 0.0, LOAD_SCAN_POINTS + 1)[1:-1]:
        if kcl_residual(v) > 0:
            return float(v), float(v_up)
        v_up = v
    raise NoConvergence(f"no load voltage in (0, {v_hi:.6g}] where the branches cover the load")


def steady_state(net: NetworkSpec, gains: Sequence[float]) -> SteadyStateResult:
    gains = [float(g) for g in gains]
    if len(gains) != len(net.branches):
        raise ValueError(f"need {len(net.branches)} gains, got {len(gains)}")
    if min(gains) < 1:
        raise ValueError(f"gains must be >= 1, got {gains}")

    stiff = [k for k, b in enumerate(net.branches) if _constant_input(b) and b.r_cable == 0]
    iterations = 0

    if stiff:
        pinned = {gains[k] * net.branches[k].curve.open_circuit_voltage for k in stiff}
        if max(pinned) - min(pinned) > 1e-12 * max(pinned):
            raise NoConvergence("ideal branches pin the load to different voltages")
        v_load = pinned.pop()
        sols = {k: _solve_branch(b, gains[k], v_load) for k, b in enumerate(net.branches) if k not in stiff}
        share = (v_load / net.r_load - sum(s.i_out for s in sols.values())) / len(stiff)
        for k in stiff:
            b = net.branches[k]
            gamma = b.curve.open_circuit_voltage
            if share < 0:
                raise NegativeBranchCurrent(f"branch {b.name} would back-feed ({share:.6g} A)")
            sols[k] = _BranchSolution(vs=gamma, v_in=gamma, i_out=share,
                                      i_s=_balance_from_output(b, share, v_load, gamma))
        ordered = [sols[k] for k in range(len(net.branches))]
        kcl = 0.0
    else:
        def kcl_residual(v):
            return sum(_solve_branch(b, g, v).i_out for b, g in zip(net.branches, gains)) - v / net.r_load

        v_hi = max(g * b.curve.open_circuit_voltage for b, g in zip(net.branches, gains))
        v_lo, v_up = _bracket_load_voltage(kcl_residual, v_hi)
        try:
            v_load, info = brentq(kcl_residual, v_lo, v_up, xtol=XTOL, rtol=RTOL, full_output=True)
        except RuntimeError as exc:
            raise NoConvergence(str(exc)) from exc
        iterations += info.iterations
        ordered = [_solve_branch(b, g, v_load) for b, g in zip(net.branches, gains)]
        kcl = abs(kcl_residual(v_load))

    for b, s in zip(net.branches, ordered):
        if s.blocked:
            raise NegativeBranchCurrent(f"branch {b.name}: gain too low for V_load = {v_load:.6g}")

    states = tuple(
        BranchState(vs=s.vs, v_in=s.v_in, v_out=v_load + s.i_out * b.r_cable, i_s=s.i_s, i_out=s.i_out)
        for b, s in zip(net.branches, ordered)
    )
    point = OperatingPoint(branches=states, v_load=v_load)
    residual = max([kcl] + [s.residual for s in ordered])
    iterations += sum(s.iterations for s in ordered)
    return SteadyStateResult(
        point=point,
        losses=tuple(branch_loss(b, s.i_s, s.i_out, v_load) for b, s in zip(net.branches, states)),
        converged=residual <= RESIDUAL_TOL,
        residual=residual,
        iterations=iterations,
    )


@dataclass(frozen=True)
class GridResult:
    gains: Tuple[float, ...]
    cost: float
    point: OperatingPoint
    feasible: int
    evaluated: int


def _vertex(net, gains, i_min, v_floor, include_circulating) -> Optional[Tuple[float, OperatingPoint]]:
    try:
        ss = steady_state(net, gains)
    except (NoConvergence, NegativeBranchCurrent):
        return None
    p = ss.point
    if not ss.converged:
        return None
    if not (v_floor - 1e-9 <= p.v_load <= net.v_load_max + 1e-9):
        return None
    if np.any(p.column("i_out") < np.asarray(i_min) - 1e-9):
        return None
    if np.any(p.column("v_out") < p.column("v_in")):
        return None
    return plan_cost(net, p, include_circulating), p


def grid_search(
    net: NetworkSpec,
    v_load_fixed: float,
    resolution: int,
    include_circulating: bool = True,
    workers: Optional[int] = None,
) -> GridResult:
    """
    Exhaustive search over gains on [1, g_max] per branch. A vertex counts when
    its steady state converges inside [v_load_fixed, V_load_max] and meets the
    output-current floors; the cheapest one wins (first in grid order on ties).
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    limits = [resolve_branch_limits(b, net, v_load_fixed) for b in net.branches]
    i_min = [l[0] for l in limits]
    axes = [np.linspace(1.0, l[1], resolution) if resolution > 1 else np.array([1.0]) for l in limits]
    vertices = [tuple(float(g) for g in v) for v in itertools.product(*axes)]
    logger.info(f"Grid search over {len(vertices)} vertices ({resolution} per axis).")

    def evaluate(gains):
        return _vertex(net, gains, i_min, v_load_fixed, include_circulating)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(evaluate, vertices))
    else:
        outcomes = [evaluate(v) for v in vertices]

    best = None
    feasible = 0
    for gains, outcome in zip(vertices, outcomes):
        if outcome is None:
            continue
        feasible += 1
        if best is None or outcome[0] < best[1]:
            best = (gains, outcome[0], outcome[1])
    if best is None:
        raise AllInfeasible(f"none of the {len(vertices)} grid vertices is feasible")
    return GridResult(gains=best[0], cost=best[1], point=best[2], feasible=feasible, evaluated=len(vertices))


def compare_points(a: OperatingPoint, b: OperatingPoint) -> Deviation:
    """Worst elementwise |a - b| / max(|a|, eps) over the branch columns and V_load."""
    if len(a.branches) != len(b.branches):
        raise ValueError("points have different branch counts")
    worst = Deviation(max_relative=abs(a.v_load - b.v_load) / max(abs(a.v_load), DEVIATION_EPS),
                      branch=None, field="v_load")
    for field in COMPARED_FIELDS:
        ref, other = a.column(field), b.column(field)
        rel = np.abs(ref - other) / np.maximum(np.abs(ref), DEVIATION_EPS)
        k = int(np.argmax(rel))
        if rel[k] > worst.max_relative:
            worst = Deviation(max_relative=float(rel[k]), branch=k, field=field)
    return worst


def compare(plan: DispatchPlan, ss: SteadyStateResult) -> Deviation:
    return compare_points(plan.point, ss.point)
