"""
Builds the convex program solved for one dispatch.

Variable layout: branch k owns x[5k:5k+5] = (Vs, V', V'', Is, I); the
epigraph variables t_k of the circulating-current terms come after all
branch blocks, one per branch with a positive weight. V_load is a constant.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, GateFailedError, InfeasibleBounds, InfeasibleError
from .lossmodel import (
    ccm_min_source_current,
    circulating_currents,
    convexity_gate,
    loss_coefficients,
    max_gain_bound,
    min_output_current,
)
from .models import Branch, BranchState, NetworkSpec, OperatingPoint, SolveRequest
from .netmodel import circulating_matrix

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-7
VIN_FLOOR_FACTOR = 20.0
PSD_TOL = 1e-10

FIELDS = ("vs", "v_in", "v_out", "i_s", "i_out")
SYMBOLS = ("Vs", "Vin", "Vout", "Is", "I")
VS, VIN, VOUT, IS, IOUT = range(5)
BLOCK = len(FIELDS)


@dataclass(frozen=True)
class QuadConstraint:
    """x'Px + q'x + r <= 0 with P symmetric PSD."""
    p: np.ndarray
    q: np.ndarray
    r: float = 0.0

    def value(self, x: np.ndarray) -> float:
        return float(x @ self.p @ x + self.q @ x + self.r)


@dataclass(frozen=True)
class ConvexProgram:
    """
    min x'P0x + q0'x + r0  s.t.  A x = b,  G x <= h,  quad_i(x) <= 0.

    Only n_vars is required; missing blocks default to empty (or zero) so the
    solver can be driven with small hand-made programs. Labels and owners are
    diagnostic and do not enter the numerics.
    """
    n_vars: int
    p0: Optional[np.ndarray] = None
    q0: Optional[np.ndarray] = None
    r0: float = 0.0
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    g_ineq: Optional[np.ndarray] = None
    h_ineq: Optional[np.ndarray] = None
    quad: Tuple[QuadConstraint, ...] = ()
    var_labels: Tuple[str, ...] = ()
    eq_labels: Tuple[str, ...] = ()
    ineq_labels: Tuple[str, ...] = ()
    quad_labels: Tuple[str, ...] = ()
    eq_owner: Tuple[int, ...] = ()
    ineq_owner: Tuple[int, ...] = ()
    quad_owner: Tuple[int, ...] = ()
    names: Tuple[str, ...] = ()
    v_load: float = 0.0
    aux_index: Tuple[Optional[int], ...] = ()
    i_min: Tuple[float, ...] = ()
    g_max: Tuple[float, ...] = ()

    def __post_init__(self):
        n = self.n_vars
        defaults = {
            "p0": np.zeros((n, n)),
            "q0": np.zeros(n),
            "a_eq": np.zeros((0, n)),
            "b_eq": np.zeros(0),
            "g_ineq": np.zeros((0, n)),
            "h_ineq": np.zeros(0),
        }
        for name, empty in defaults.items():
            value = getattr(self, name)
            object.__setattr__(self, name, empty if value is None else np.asarray(value, dtype=float))
        if not self.var_labels:
            object.__setattr__(self, "var_labels", tuple(f"x{i}" for i in range(n)))
        if self.a_eq.shape != (len(self.b_eq), n) or self.g_ineq.shape != (len(self.h_ineq), n):
            raise DimensionMismatch("constraint blocks do not match n_vars")
        if self.p0.shape != (n, n) or self.q0.shape != (n,):
            raise DimensionMismatch("objective does not match n_vars")

    @property
    def n_branches(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Residuals:
    eq_max: float
    ineq_max: float
    quad_slacks: np.ndarray = field(repr=False)

    @property
    def feasible(self) -> bool:
        return self.eq_max <= FEASIBILITY_TOL and self.ineq_max <= FEASIBILITY_TOL


def resolve_branch_limits(b: Branch, net: NetworkSpec, v_load: float) -> Tuple[float, float]:
    """(I_min, g_max) for one branch; values given in the document win over derived ones."""
    try:
        if b.i_min is not None:
            i_min = b.i_min
        elif b.is_min is not None:
            i_min = min_output_current(b, b.is_min, v_load)
        elif b.inductance is not None:
            i_min = min_output_current(b, ccm_min_source_current(b, net.f_s), v_load)
        else:
            i_min = 0.0
    except InfeasibleError as exc:
        raise InfeasibleBounds(str(exc)) from exc
    g_max = b.g_max if b.g_max is not None else max_gain_bound(b, net.r_load)
    return float(i_min), float(g_max)


class _Builder:
    """Accumulates labelled rows; rows keep the order they are added in."""

    def __init__(self, n_vars: int):
        self.n = n_vars
        self.eq: List[Tuple[np.ndarray, float, str, int]] = []
        self.ineq: List[Tuple[np.ndarray, float, str, int]] = []
        self.quad: List[Tuple[QuadConstraint, str, int]] = []

    def row(self, coeffs) -> np.ndarray:
        a = np.zeros(self.n)
        for idx, value in coeffs:
            a[idx] += value
        return a

    def add_eq(self, coeffs, rhs: float, label: str, owner: int):
        self.eq.append((self.row(coeffs), rhs, label, owner))

    def add_le(self, coeffs, rhs: float, label: str, owner: int):
        self.ineq.append((self.row(coeffs), rhs, label, owner))


def build_program(req: SolveRequest) -> ConvexProgram:
    net = req.network
    v = req.v_load
    n_branch = len(net.branches)

    for b in net.branches:
        gate = convexity_gate(b)
        if not gate.passed:
            raise GateFailedError(b.name, gate.margin_1, gate.margin_3)

    limits = [resolve_branch_limits(b, net, v) for b in net.branches]

    aux_index: List[Optional[int]] = []
    next_aux = BLOCK * n_branch
    for b in net.branches:
        if req.include_circulating and b.mu > 0 and n_branch > 1:
            aux_index.append(next_aux)
            next_aux += 1
        else:
            aux_index.append(None)
    n_vars = next_aux

    var_labels = [f"{sym}[{b.name}]" for b in net.branches for sym in SYMBOLS]
    var_labels += [f"t[{b.name}]" for b, t in zip(net.branches, aux_index) if t is not None]

    p0 = np.zeros((n_vars, n_vars))
    q0 = np.zeros(n_vars)
    lap = circulating_matrix([b.r_cable for b in net.branches])
    builder = _Builder(n_vars)

    for k, b in enumerate(net.branches):
        base = BLOCK * k
        vs, vin, vout, i_s, i_out = (base + j for j in range(BLOCK))
        i_min, g_max = limits[k]
        coef = loss_coefficients(b, v)
        tag = f"[{b.name}]"

        builder.add_eq([(vin, 1.0), (vs, -1.0), (i_s, b.rs)], 0.0, "kvl_source" + tag, k)
        builder.add_eq([(vout, 1.0), (i_out, -b.r_cable)], v, "kvl_cable" + tag, k)

        builder.add_le([(vin, 1.0), (vout, -1.0)], 0.0, "gain_min" + tag, k)
        builder.add_le([(vout, 1.0), (vin, -g_max)], 0.0, "gain_max" + tag, k)
        for j, piece in enumerate(b.curve.pieces):
            builder.add_le([(vs, 1.0), (i_s, -piece.beta)], piece.gamma, f"vi{tag}[{j}]", k)
        builder.add_le([(i_out, -1.0)], -i_min, "i_min" + tag, k)
        for idx, sym in zip((vs, vin, vout, i_s), SYMBOLS[:4]):
            builder.add_le([(idx, -1.0)], 0.0, f"nonneg_{sym}{tag}", k)
        if req.enforce_vin_floor:
            builder.add_le([(vin, -1.0)], -VIN_FLOOR_FACTOR * b.v_d, "vin_floor" + tag, k)

        # generation minus losses and delivered power, one per piece
        block = coef.hessian_block()
        for j, piece in enumerate(b.curve.pieces):
            p = np.zeros((n_vars, n_vars))
            p[np.ix_([i_s, i_out], [i_s, i_out])] = block
            p[i_s, i_s] -= piece.beta
            q = np.zeros(n_vars)
            q[i_s] = coef.s - piece.gamma
            q[i_out] = coef.i + v
            builder.quad.append((QuadConstraint(p=p, q=q), f"power{tag}[{j}]", k))

        p0[np.ix_([i_s, i_out], [i_s, i_out])] += b.lam * block
        q0[i_s] += b.lam * coef.s
        q0[i_out] += b.lam * coef.i

        t = aux_index[k]
        if t is not None:
            q0[t] += b.mu
            row = [(BLOCK * j + VOUT, lap[k, j]) for j in range(n_branch) if lap[k, j] != 0]
            builder.add_le(row + [(t, -1.0)], 0.0, "circ_pos" + tag, k)
            builder.add_le([(idx, -c) for idx, c in row] + [(t, -1.0)], 0.0, "circ_neg" + tag, k)

    builder.add_eq([(BLOCK * k + IOUT, 1.0) for k in range(n_branch)], v / net.r_load, "kcl", n_branch)

    _check_psd(p0, "objective")
    for quad, label, _ in builder.quad:
        _check_psd(quad.p, label)

    prog = ConvexProgram(
        n_vars=n_vars,
        p0=p0,
        q0=q0,
        a_eq=np.array([r[0] for r in builder.eq]),
        b_eq=np.array([r[1] for r in builder.eq]),
        g_ineq=np.array([r[0] for r in builder.ineq]),
        h_ineq=np.array([r[1] for r in builder.ineq]),
        quad=tuple(q for q, _, _ in builder.quad),
        var_labels=tuple(var_labels),
        eq_labels=tuple(r[2] for r in builder.eq),
        ineq_labels=tuple(r[2] for r in builder.ineq),
        quad_labels=tuple(label for _, label, _ in builder.quad),
        eq_owner=tuple(r[3] for r in builder.eq),
        ineq_owner=tuple(r[3] for r in builder.ineq),
        quad_owner=tuple(o for _, _, o in builder.quad),
        names=net.names,
        v_load=v,
        aux_index=tuple(aux_index),
        i_min=tuple(l[0] for l in limits),
        g_max=tuple(l[1] for l in limits),
    )
    logger.info(
        f"Built program: {n_vars} variables, {len(prog.b_eq)} equalities, "
        f"{len(prog.h_ineq)} linear and {len(prog.quad)} quadratic inequalities (V_load={v})."
    )
    return prog


def _check_psd(p: np.ndarray, label: str):
    sym = 0.5 * (p + p.T)
    if np.max(np.abs(sym - p)) > PSD_TOL:
        raise ValueError(f"{label}: matrix is not symmetric")
    active = np.flatnonzero(np.any(sym != 0, axis=0))
    if active.size == 0:
        return
    smallest = np.linalg.eigvalsh(sym[np.ix_(active, active)]).min()
    if smallest < -PSD_TOL:
        raise ValueError(f"{label}: matrix is not PSD (min eigenvalue {smallest:.3e})")


def _check_dim(prog: ConvexProgram, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (prog.n_vars,):
        raise DimensionMismatch(f"expected {prog.n_vars} entries, got shape {x.shape}")
    return x


def objective_value(prog: ConvexProgram, x) -> float:
    x = _check_dim(prog, x)
    return float(x @ prog.p0 @ x + prog.q0 @ x + prog.r0)


def constraint_residuals(prog: ConvexProgram, x) -> Residuals:
    x = _check_dim(prog, x)
    eq = np.abs(prog.a_eq @ x - prog.b_eq)
    lin = prog.g_ineq @ x - prog.h_ineq
    quad = np.array([c.value(x) for c in prog.quad])
    worst = max([0.0] + list(lin) + list(quad))
    return Residuals(
        eq_max=float(eq.max()) if eq.size else 0.0,
        ineq_max=float(worst),
        quad_slacks=-quad,
    )


def point_from_vector(prog: ConvexProgram, x) -> OperatingPoint:
    x = _check_dim(prog, x)
    states = []
    for k in range(prog.n_branches):
        block = np.maximum(x[BLOCK * k: BLOCK * (k + 1)], 0.0)
        states.append(BranchState(**dict(zip(FIELDS, map(float, block)))))
    return OperatingPoint(branches=tuple(states), v_load=prog.v_load)


def vector_from_point(prog: ConvexProgram, point: OperatingPoint, r_cable: Sequence[float]) -> np.ndarray:
    """Inverse of point_from_vector; epigraph variables take |Ic_k| so they sit on their bound."""
    if len(point.branches) != prog.n_branches:
        raise DimensionMismatch(f"point has {len(point.branches)} branches, program {prog.n_branches}")
    x = np.zeros(prog.n_vars)
    for k, state in enumerate(point.branches):
        x[BLOCK * k: BLOCK * (k + 1)] = [getattr(state, f) for f in FIELDS]
    ic = circulating_currents(point.column("v_out"), r_cable)
    for k, t in enumerate(prog.aux_index):
        if t is not None:
            x[t] = abs(ic[k])
    return x


def _terms(coeffs: np.ndarray, labels: Sequence[str]) -> str:
    nz = np.flatnonzero(coeffs)
    return " ".join(f"{coeffs[i]:+.12g}*{labels[i]}" for i in nz) or "0"


def dump_program(prog: ConvexProgram) -> str:
    """
    Text listing: header, variables, then every constraint grouped by owning
    branch (global rows last) and by kind inside a branch.
    """
    labels = prog.var_labels
    lines = [f"program n_vars={prog.n_vars} v_load={prog.v_load:.12g}"]
    lines += [f"var {i} {name}" for i, name in enumerate(labels)]

    rows = []
    for i in range(len(prog.b_eq)):
        owner = prog.eq_owner[i] if prog.eq_owner else 0
        name = prog.eq_labels[i] if prog.eq_labels else f"eq{i}"
        rows.append((owner, 0, f"eq {name}: {_terms(prog.a_eq[i], labels)} = {prog.b_eq[i]:.12g}"))
    for i in range(len(prog.h_ineq)):
        owner = prog.ineq_owner[i] if prog.ineq_owner else 0
        name = prog.ineq_labels[i] if prog.ineq_labels else f"ineq{i}"
        rows.append((owner, 1, f"le {name}: {_terms(prog.g_ineq[i], labels)} <= {prog.h_ineq[i]:.12g}"))
    for i, c in enumerate(prog.quad):
        owner = prog.quad_owner[i] if prog.quad_owner else 0
        name = prog.quad_labels[i] if prog.quad_labels else f"quad{i}"
        rr, cc = np.nonzero(np.triu(c.p))
        quad_terms = " ".join(
            f"{(c.p[a, b] if a == b else 2 * c.p[a, b]):+.12g}*{labels[a]}*{labels[b]}" for a, b in zip(rr, cc)
        )
        rows.append((owner, 2, f"quad {name}: {quad_terms} {_terms(c.q, labels)} {c.r:+.12g} <= 0"))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines += [text for _, _, text in rows]

    rr, cc = np.nonzero(np.triu(prog.p0))
    obj_quad = " ".join(
        f"{(prog.p0[a, b] if a == b else 2 * prog.p0[a, b]):+.12g}*{labels[a]}*{labels[b]}" for a, b in zip(rr, cc)
    )
    lines.append(f"min {obj_quad} {_terms(prog.q0, labels)} {prog.r0:+.12g}")
    return "\n".join(lines) + "\n"
