"""
Closed-form loss and parameter algebra for one boost branch.

Loss convention: the switching term is alpha*(V_load + V_D)*Is + alpha*Is*I*R
+ alpha*Is^2*R_D, with the peak diode current taken as the source current.
That makes

    Q = Is^2*(Rs + R_L + R_M + alpha*R_D) + I^2*R + Is*I*(alpha*R - (R_M - R_D))
        + alpha*(V_load + V_D)*Is + V_D*I

and the grouped form built from the effective resistances is the same
polynomial term by term.
"""
import logging
import math
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateFit, InfeasibleError, MissingInductance, NegativeAlpha, NonPhysicalPoint
from .models import Branch, EffectiveResistances, GateResult, LossBreakdown, LossCoefficients
from .netmodel import circulating_matrix, pwl_eval

logger = logging.getLogger(__name__)

GAIN_CAP = 50.0          # returned when the gain expression is unbounded (lossless branch)
GAIN_SAFETY = 0.95       # 1 - 1/20: input held at >= 20 diode drops
CCM_RIPPLE_FACTOR = 5.0
D_EDGE = 1e-6
D_TOL = 1e-8


def effective_resistances(b: Branch) -> EffectiveResistances:
    spread = abs(b.r_m - b.r_d)
    return EffectiveResistances(
        r_eff1=b.rs + b.r_l + b.r_m + b.alpha * b.r_d,
        r_eff2=spread / 2 + b.alpha ** 2 * b.r_cable / 2,
        r_eff3=(b.r_cable - spread) / 2,
        sign=float(np.sign(b.r_m - b.r_d)),
    )


def convexity_gate(b: Branch) -> GateResult:
    reff = effective_resistances(b)
    margin_1 = reff.r_eff1 - reff.r_eff2
    margin_3 = reff.r_eff3
    return GateResult(passed=margin_1 >= 0 and margin_3 >= 0, margin_1=margin_1, margin_3=margin_3)


def loss_coefficients(b: Branch, v_load: float) -> LossCoefficients:
    return LossCoefficients(
        ss=b.rs + b.r_l + b.r_m + b.alpha * b.r_d,
        ii=b.r_cable,
        si=b.alpha * b.r_cable - (b.r_m - b.r_d),
        s=b.alpha * (v_load + b.v_d),
        i=b.v_d,
    )


def grouped_loss(b: Branch, i_s: float, i_out: float, v_load: float) -> float:
    """Q written with the effective resistances (the sum of squares used for the convexity proof)."""
    reff = effective_resistances(b)
    spread = abs(b.r_m - b.r_d)
    return (i_s ** 2 * (reff.r_eff1 - reff.r_eff2)
            + (i_out + b.alpha * i_s) ** 2 * b.r_cable / 2
            + (i_s - reff.sign * i_out) ** 2 * spread / 2
            + b.alpha * (v_load + b.v_d) * i_s
            + b.v_d * i_out
            + i_out ** 2 * reff.r_eff3)


def branch_loss(b: Branch, i_s: float, i_out: float, v_load: float) -> LossBreakdown:
    """Per-part losses of one branch; parts follow the physical origin of each term."""
    if i_s < i_out or i_out < 0:
        raise NonPhysicalPoint(f"branch {b.name}: need Is >= I >= 0, got Is={i_s}, I={i_out}")
    source_and_inductor = i_s ** 2 * (b.rs + b.r_l)
    mosfet = i_s * (i_s - i_out) * b.r_m
    diode = b.v_d * i_out + i_s * i_out * b.r_d
    cable = i_out ** 2 * b.r_cable
    switching = (b.alpha * (v_load + b.v_d) * i_s
                 + b.alpha * i_s * i_out * b.r_cable
                 + b.alpha * i_s ** 2 * b.r_d)
    total = source_and_inductor + mosfet + diode + cable + switching
    return LossBreakdown(
        source_and_inductor=source_and_inductor,
        mosfet_conduction=mosfet,
        diode_conduction=diode,
        cable=cable,
        switching=switching,
        total_q=total,
    )


def switching_alpha(tau_on: float, tau_off: float, f_s: float) -> float:
    if min(tau_on, tau_off, f_s) < 0:
        raise ValueError("transition times and frequency must be >= 0")
    return 0.5 * (tau_on + tau_off) * f_s


def ccm_min_source_current(b: Branch, f_s: float) -> float:
    if b.inductance is None or b.inductance <= 0:
        raise MissingInductance(f"branch {b.name} has no inductance for the CCM bound")
    return CCM_RIPPLE_FACTOR * pwl_eval(b.curve, 0.0) / (f_s * b.inductance)


def smallest_positive_root(a: float, b: float, c: float) -> float:
    """
    Smallest root >= 0 of a*x^2 + b*x + c, using the cancellation-free pair
    q/a and c/q. Raises InfeasibleError when there is none.
    """
    if c == 0:
        return 0.0
    if a == 0:
        if b == 0:
            raise InfeasibleError("degenerate equation has no root")
        root = -c / b
        if root < 0:
            raise InfeasibleError("linear equation has a negative root only")
        return root
    disc = b * b - 4 * a * c
    if disc < 0:
        raise InfeasibleError("quadratic has no real root")
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = [r for r in (q / a, c / q if q != 0 else float("inf")) if r >= 0]
    if not roots:
        raise InfeasibleError("quadratic has no positive root")
    return min(roots)


def min_output_current(b: Branch, is_min: float, v_load: float) -> float:
    """
    Output current at which the branch, drawing exactly is_min from its source,
    balances generation against losses plus delivered power.
    """
    if is_min < 0:
        raise ValueError("is_min must be >= 0")
    if is_min == 0:
        return 0.0
    coef = loss_coefficients(b, v_load)
    generated = is_min * pwl_eval(b.curve, is_min)
    a = coef.ii
    lin = coef.si * is_min + coef.i + v_load
    const = coef.ss * is_min ** 2 + coef.s * is_min - generated
    try:
        return smallest_positive_root(a, lin, const)
    except InfeasibleError as exc:
        raise InfeasibleError(
            f"branch {b.name}: no positive output current balances Is_min={is_min} ({exc})") from exc


def _gain_expression(d, b: Branch, r_load: float):
    dp = 1.0 - d
    num = GAIN_SAFETY * dp * (b.r_cable + r_load)
    den = dp ** 2 * (b.r_cable + r_load) + dp * b.r_d + d * b.r_m + b.r_l
    return num / den


def max_gain_bound(b: Branch, r_load: float) -> float:
    """
    Largest achievable gain over duty ratios for a converter loaded by
    R_cable + R_load, derated for a 20x diode-drop input floor.
    """
    if b.r_l == 0 and b.r_m == 0 and b.r_d == 0:
        return GAIN_CAP

    grid = np.linspace(D_EDGE, 1 - D_EDGE, 2001)
    values = _gain_expression(grid, b, r_load)
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    res = minimize_scalar(lambda d: -_gain_expression(d, b, r_load), bounds=(lo, hi),
                          method="bounded", options={"xatol": D_TOL})
    g = max(float(-res.fun), float(values[best]))
    return min(g, GAIN_CAP)


def circulating_currents(v_out: Sequence[float], r_cable: Sequence[float]) -> np.ndarray:
    """Ic_k = sum over j != k of (V''_k - V''_j) / (R_k + R_j)."""
    v = np.asarray(v_out, dtype=float)
    if v.size < 1:
        raise ValueError("need at least one branch")
    return circulating_matrix(r_cable) @ v


def fit_diode(samples: Iterable[Tuple[float, float]]) -> Tuple[float, float]:
    """Least-squares fit of P = V_D*I + R_D*I^2 through the 2x2 normal equations."""
    data = np.asarray(list(samples), dtype=float)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != 2:
        raise DegenerateFit("need at least two (current, power) samples")
    current, power = data[:, 0], data[:, 1]
    if len(np.unique(current[current != 0])) < 2:
        raise DegenerateFit("need at least two distinct non-zero currents")

    normal = np.array([
        [np.sum(current ** 2), np.sum(current ** 3)],
        [np.sum(current ** 3), np.sum(current ** 4)],
    ])
    rhs = np.array([np.sum(power * current), np.sum(power * current ** 2)])
    if np.linalg.cond(normal) > 1e12:
        raise DegenerateFit("normal equations are singular")
    v_d, r_d = np.linalg.solve(normal, rhs)
    return float(v_d), float(r_d)


def _test_current(v_load: float, r_load: float) -> float:
    # The test rig drives a third of the load current through the MOSFET.
    return v_load / (3 * r_load)


def mosfet_test_loss(alpha: float, v_load: float, v_d: float, r_cable: float, r_d: float,
                     r_m: float, r_load: float) -> float:
    """Average MOSFET dissipation the rig would record for a given alpha (duty 0.5)."""
    i3 = _test_current(v_load, r_load)
    return alpha * (v_load + v_d + i3 * (r_cable + r_d)) * i3 + 0.5 * i3 ** 2 * r_m


def estimate_alpha(p_loss: float, v_load: float, v_d: float, r_cable: float, r_d: float,
                   r_m: float, r_load: float) -> float:
    i3 = _test_current(v_load, r_load)
    denominator = (v_load + v_d + i3 * (r_cable + r_d)) * i3
    if denominator <= 0:
        raise ValueError("switching test denominator must be positive")
    numerator = p_loss - 0.5 * i3 ** 2 * r_m
    if numerator < 0:
        raise NegativeAlpha(
            f"recorded loss {p_loss} W is below the conduction share {0.5 * i3 ** 2 * r_m} W")
    return numerator / denominator
