import logging
from typing import List

import networkx as nx
import numpy as np

from .errors import NetworkValidationError, Violation
from .models import NetworkSpec, PwlCurve

logger = logging.getLogger(__name__)


def pwl_eval(curve: PwlCurve, i):
    """
    Source voltage at current i: the minimum over all affine pieces.
    Accepts a scalar or an array of currents (all >= 0).
    """
    currents = np.asarray(i, dtype=float)
    if np.any(currents < 0):
        raise ValueError("pwl_eval is defined for i >= 0 only")
    values = curve.betas[:, None] * currents.reshape(1, -1) + curve.gammas[:, None]
    out = values.min(axis=0)
    if currents.ndim == 0:
        return float(out[0])
    return out.reshape(currents.shape)


def pwl_argmin(curve: PwlCurve, i: float) -> int:
    """Index of the piece that attains the minimum at i (first one on ties)."""
    if i < 0:
        raise ValueError("pwl_argmin is defined for i >= 0 only")
    return int(np.argmin(curve.betas * i + curve.gammas))


def redundant_pieces(curve: PwlCurve) -> List[int]:
    """
    Pieces that never attain the minimum on I >= 0. The candidate points are
    zero, every pairwise crossing on the positive axis, and one point past
    the last crossing; a piece is useful if it wins at a midpoint between
    consecutive candidates.
    """
    betas, gammas = curve.betas, curve.gammas
    crossings = [0.0]
    for a in range(len(betas)):
        for b in range(a + 1, len(betas)):
            if betas[a] != betas[b]:
                x = (gammas[b] - gammas[a]) / (betas[a] - betas[b])
                if x > 0:
                    crossings.append(x)
    crossings = sorted(set(crossings))
    probes = [0.0]
    probes += [0.5 * (lo + hi) for lo, hi in zip(crossings[:-1], crossings[1:])]
    probes.append(crossings[-1] + 1.0 + crossings[-1])
    winners = {pwl_argmin(curve, x) for x in probes}
    return [j for j in range(len(betas)) if j not in winners]


def find_violations(spec: NetworkSpec) -> List[Violation]:
    """Every broken type invariant or modelling assumption, in branch order."""
    violations: List[Violation] = []

    if not spec.branches:
        violations.append(Violation("EmptyNetwork", "network has no branches"))
    if spec.r_load <= 0:
        violations.append(Violation("NonPositiveLoad", f"R_load = {spec.r_load} must be > 0"))
    if not (0 < spec.v_load_min <= spec.v_load_max):
        violations.append(Violation(
            "InvalidLoadRange", f"need 0 < v_min <= v_max, got [{spec.v_load_min}, {spec.v_load_max}]"))
    if spec.f_s <= 0:
        violations.append(Violation("NonPositiveSwitchingFrequency", f"f_s = {spec.f_s}"))

    seen = set()
    for b in spec.branches:
        if b.name in seen:
            violations.append(Violation("DuplicateBranchName", "branch names must be unique", b.name))
        seen.add(b.name)

        if not b.curve.pieces:
            violations.append(Violation("NonConcaveCurve", "curve has no pieces", b.name))
            continue
        if np.any(b.curve.betas > 0):
            violations.append(Violation(
                "NonConcaveCurve", "every slope must be <= 0 (concave, non-increasing)", b.name))
        if np.any(b.curve.gammas <= 0):
            violations.append(Violation("NonPositiveIntercept", "every intercept must be > 0", b.name))

        for field in ("rs", "r_cable", "r_l", "r_m", "r_d"):
            if getattr(b, field) < 0:
                violations.append(Violation("NegativeResistance", f"{field} = {getattr(b, field)}", b.name))
        if b.v_d < 0:
            violations.append(Violation("NegativeForwardVoltage", f"v_d = {b.v_d}", b.name))
        if not (0 <= b.alpha < 1):
            violations.append(Violation("AlphaOutOfRange", f"alpha = {b.alpha} not in [0, 1)", b.name))
        if b.lam <= 0:
            violations.append(Violation("NonPositiveWeight", f"lambda = {b.lam}", b.name))
        if b.mu < 0:
            violations.append(Violation("NegativeWeight", f"mu = {b.mu}", b.name))
        if b.g_max is not None and b.g_max <= 1:
            violations.append(Violation("GainBoundTooLow", f"g_max = {b.g_max} must be > 1", b.name))
        for field in ("i_min", "is_min", "inductance"):
            value = getattr(b, field)
            if value is not None and value < 0:
                violations.append(Violation("NegativeCurrentBound", f"{field} = {value}", b.name))

        # A6: the load floor must sit above every open-circuit voltage.
        v_oc = b.curve.open_circuit_voltage
        if v_oc >= spec.v_load_min:
            violations.append(Violation(
                "OpenCircuitAboveVloadMin",
                f"open-circuit voltage {v_oc} >= V_load_min {spec.v_load_min}", b.name))

    for k, a in enumerate(spec.branches):
        for b in spec.branches[k + 1:]:
            if a.r_cable + b.r_cable <= 0 and (a.mu > 0 or b.mu > 0):
                violations.append(Violation(
                    "CirculatingPathShorted",
                    f"R_{a.name} + R_{b.name} = 0 leaves the circulating current undefined", a.name))
    return violations


def validate_network(spec: NetworkSpec) -> NetworkSpec:
    """Return the spec unchanged, or raise with every violation found."""
    violations = find_violations(spec)
    if violations:
        raise NetworkValidationError(violations)
    for b in spec.branches:
        unused = redundant_pieces(b.curve)
        if unused:
            logger.warning(f"Branch {b.name}: pieces {unused} never attain the minimum on I >= 0.")
    return spec


def interconnection_graph(r_cable) -> nx.Graph:
    """
    Complete graph over converter outputs. Edge (k, j) carries the conductance
    of the cable path between the two outputs, 1 / (R_k + R_j).
    """
    r = [float(v) for v in r_cable]
    graph = nx.complete_graph(len(r))
    for k, j in graph.edges:
        total = r[k] + r[j]
        graph.edges[k, j]["conductance"] = 1.0 / total if total > 0 else 0.0
    return graph


def circulating_matrix(r_cable) -> np.ndarray:
    """Weighted Laplacian L such that Ic = L @ V''."""
    graph = interconnection_graph(r_cable)
    if graph.number_of_nodes() == 1:
        return np.zeros((1, 1))
    return nx.laplacian_matrix(graph, nodelist=sorted(graph.nodes), weight="conductance").toarray()
