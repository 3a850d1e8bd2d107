import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import DivideByZeroVoltage, GainBelowOne, NonPhysicalPoint, TightnessAuditError
from .lossmodel import branch_loss, circulating_currents, loss_coefficients
from .models import BranchState, BranchTightness, DispatchPlan, NetworkSpec, OperatingPoint, POINT_TOL
from .netmodel import pwl_eval

logger = logging.getLogger(__name__)

POWER_SLACK_TOL = 1e-6


def restore_vi_tightness(point: OperatingPoint, net: NetworkSpec) -> OperatingPoint:
    """
    Lift every source voltage that sits below its curve back onto it and shift
    V' by the same amount. Currents, V'' and V_load are left alone, so the
    objective does not move.
    """
    states = []
    for b, s in zip(net.branches, point.branches):
        on_curve = pwl_eval(b.curve, s.i_s)
        vs, v_in = s.vs, s.v_in
        if vs < on_curve:
            # V' uses the Vs from before the update
            v_in = v_in + on_curve - vs
            vs = on_curve
        if v_in > s.v_out + POINT_TOL * max(1.0, abs(s.v_out)):
            raise GainBelowOne(
                f"branch {b.name}: V' = {v_in} exceeds V'' = {s.v_out} after restoring the VI curve"
            )
        states.append(BranchState(vs=vs, v_in=v_in, v_out=s.v_out, i_s=s.i_s, i_out=s.i_out))
    return OperatingPoint(branches=tuple(states), v_load=point.v_load)


def audit_power_tightness(point: OperatingPoint, net: NetworkSpec, v_load: float) -> np.ndarray:
    """(Vs*Is - Q - V_load*I) / (Vs*Is) per branch; zero when the power balance is tight."""
    slacks = []
    for b, s in zip(net.branches, point.branches):
        generated = s.vs * s.i_s
        q = loss_coefficients(b, v_load).evaluate(s.i_s, s.i_out)
        slack = generated - q - v_load * s.i_out
        slacks.append(slack / generated if generated > 0 else slack)
    return np.array(slacks)


def check_tightness(slacks: Sequence[float], names: Sequence[str], strict: bool = False) -> bool:
    loose = [(n, s) for n, s in zip(names, slacks) if abs(s) > POWER_SLACK_TOL]
    if not loose:
        return True
    message = ", ".join(f"{n}: {s:.3e}" for n, s in loose)
    if strict:
        raise TightnessAuditError(f"power balance not tight: {message}")
    logger.warning(f"Power balance not tight ({message}).")
    return False


def extract_gains(point: OperatingPoint) -> Tuple[float, ...]:
    gains = []
    for k, s in enumerate(point.branches):
        if s.v_in <= 0:
            raise DivideByZeroVoltage(f"branch {k}: V' = {s.v_in}")
        gains.append(s.v_out / s.v_in)
    return tuple(gains)


def extract_duties(point: OperatingPoint) -> Tuple[float, ...]:
    duties = []
    for k, s in enumerate(point.branches):
        if s.i_s <= 0 or s.i_s < s.i_out:
            raise NonPhysicalPoint(f"branch {k}: duty needs Is > 0 and Is >= I (Is={s.i_s}, I={s.i_out})")
        duties.append(1.0 - s.i_out / s.i_s)
    return tuple(duties)


def quantize(duties: Sequence[float], resolution: int) -> Tuple[float, ...]:
    """
    Round each duty to the nearest step a counter with `resolution` ticks per
    period can produce, kept strictly inside (0, 1).
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    ticks = np.clip(np.round(np.asarray(duties, dtype=float) * resolution), 1, resolution - 1)
    return tuple(float(t / resolution) for t in ticks)


def plan_cost(net: NetworkSpec, point: OperatingPoint, include_circulating: bool = True) -> float:
    cost = sum(
        b.lam * loss_coefficients(b, point.v_load).evaluate(s.i_s, s.i_out)
        for b, s in zip(net.branches, point.branches)
    )
    if include_circulating and len(net.branches) > 1:
        ic = circulating_currents(point.column("v_out"), [b.r_cable for b in net.branches])
        cost += float(np.sum([b.mu * abs(c) for b, c in zip(net.branches, ic)]))
    return float(cost)


def assemble_plan(
    net: NetworkSpec,
    raw: OperatingPoint,
    g_max: Sequence[float],
    include_circulating: bool = True,
    duty_resolution: Optional[int] = None,
    solver_iterations: int = 0,
) -> DispatchPlan:
    """Tighten the solver point and derive everything reported alongside it."""
    point = restore_vi_tightness(raw, net)
    v_load = point.v_load

    vi_before = [pwl_eval(b.curve, s.i_s) - s.vs for b, s in zip(net.branches, raw.branches)]
    vi_after = [pwl_eval(b.curve, s.i_s) - s.vs for b, s in zip(net.branches, point.branches)]
    slacks = audit_power_tightness(point, net, v_load)

    duties = extract_duties(point)
    if duty_resolution:
        duties = quantize(duties, duty_resolution)

    circulating = circulating_currents(point.column("v_out"), [b.r_cable for b in net.branches])
    plan = DispatchPlan(
        names=net.names,
        point=point,
        gains=extract_gains(point),
        g_max=tuple(float(g) for g in g_max),
        duties=duties,
        losses=tuple(branch_loss(b, s.i_s, s.i_out, v_load) for b, s in zip(net.branches, point.branches)),
        circulating=tuple(float(c) for c in circulating),
        total_cost=plan_cost(net, point, include_circulating),
        tightness=tuple(
            BranchTightness(power_slack=float(p), vi_slack_before=float(a), vi_slack_after=float(c))
            for p, a, c in zip(slacks, vi_before, vi_after)
        ),
        solver_iterations=solver_iterations,
    )
    logger.info(f"Plan assembled: total cost {plan.total_cost:.6f}, gains {[round(g, 4) for g in plan.gains]}")
    return plan
