from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Tolerance used when checking sign/ordering invariants on computed points.
POINT_TOL = 1e-9

# --- NETWORK MODELS (what the user describes) ---


class Piece(BaseModel):
    """One affine piece I -> beta*I + gamma of a source VI characteristic."""
    model_config = ConfigDict(frozen=True)

    beta: float = Field(..., description="Slope in volts per ampere (<= 0)")
    gamma: float = Field(..., description="Intercept in volts (> 0)")


class PwlCurve(BaseModel):
    """
    Concave non-increasing VI characteristic, stored as the pointwise minimum
    of its affine pieces. Pieces are kept in the order given.
    """
    model_config = ConfigDict(frozen=True)

    pieces: Tuple[Piece, ...]

    @classmethod
    def constant(cls, volts: float) -> "PwlCurve":
        return cls(pieces=(Piece(beta=0.0, gamma=volts),))

    @classmethod
    def from_pairs(cls, pairs) -> "PwlCurve":
        return cls(pieces=tuple(Piece(beta=b, gamma=g) for b, g in pairs))

    @property
    def betas(self) -> np.ndarray:
        return np.array([p.beta for p in self.pieces], dtype=float)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([p.gamma for p in self.pieces], dtype=float)

    @property
    def open_circuit_voltage(self) -> float:
        return float(self.gammas.min())


class Branch(BaseModel):
    """One source + boost converter + output cable."""
    model_config = ConfigDict(frozen=True)

    name: str
    curve: PwlCurve
    rs: float = Field(..., description="Source internal resistance (ohm)")
    r_cable: float = Field(..., description="Converter-to-load cable resistance (ohm)")
    r_l: float = Field(..., description="Inductor DC resistance (ohm)")
    r_m: float = Field(..., description="MOSFET on-state resistance (ohm)")
    r_d: float = Field(..., description="Diode resistance (ohm)")
    v_d: float = Field(..., description="Diode forward bias (volt)")
    alpha: float = Field(..., description="Switching-loss multiplicative constant")
    inductance: Optional[float] = Field(None, description="Inductance (henry), used for the CCM bound")
    is_min: Optional[float] = Field(None, description="Minimum source current (ampere)")
    i_min: Optional[float] = Field(None, description="Minimum output current (ampere); wins over is_min")
    g_max: Optional[float] = Field(None, description="Gain upper bound; derived when absent")
    lam: float = Field(1.0, description="Loss weight lambda")
    mu: float = Field(0.0, description="Circulating-current weight")


class NetworkSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    branches: Tuple[Branch, ...]
    r_load: float
    v_load_min: float
    v_load_max: float
    f_s: float = Field(..., description="Switching frequency (hertz)")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(b.name for b in self.branches)


# --- SOLUTION MODELS (what the pipeline produces) ---


class BranchState(BaseModel):
    """Averaged steady-state quantities of one branch."""
    model_config = ConfigDict(frozen=True)

    vs: float
    v_in: float
    v_out: float
    i_s: float
    i_out: float

    @model_validator(mode="after")
    def _physical(self):
        for field in ("vs", "v_in", "v_out", "i_s", "i_out"):
            if getattr(self, field) < -POINT_TOL:
                raise ValueError(f"{field} must be non-negative, got {getattr(self, field)}")
        if self.v_in > self.v_out + POINT_TOL * max(1.0, abs(self.v_out)):
            raise ValueError(f"boost branch needs v_in <= v_out ({self.v_in} > {self.v_out})")
        return self


class OperatingPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    branches: Tuple[BranchState, ...]
    v_load: float

    def column(self, field: str) -> np.ndarray:
        return np.array([getattr(s, field) for s in self.branches], dtype=float)


class EffectiveResistances(BaseModel):
    model_config = ConfigDict(frozen=True)

    r_eff1: float
    r_eff2: float
    r_eff3: float
    sign: float = Field(..., description="sign(R_M - R_D)")


class GateResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    passed: bool
    margin_1: float = Field(..., description="r_eff1 - r_eff2")
    margin_3: float = Field(..., description="r_eff3")


class LossCoefficients(BaseModel):
    """Q = ss*Is^2 + ii*I^2 + si*Is*I + s*Is + i*I for one branch at a fixed load voltage."""
    model_config = ConfigDict(frozen=True)

    ss: float
    ii: float
    si: float
    s: float
    i: float

    def evaluate(self, i_s, i_out):
        return (self.ss * i_s * i_s + self.ii * i_out * i_out + self.si * i_s * i_out
                + self.s * i_s + self.i * i_out)

    def hessian_block(self) -> np.ndarray:
        return np.array([[self.ss, 0.5 * self.si], [0.5 * self.si, self.ii]])


class LossBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True)

    source_and_inductor: float
    mosfet_conduction: float
    diode_conduction: float
    cable: float
    switching: float
    total_q: float

    @model_validator(mode="after")
    def _sums(self):
        parts = (self.source_and_inductor + self.mosfet_conduction + self.diode_conduction
                 + self.cable + self.switching)
        if abs(parts - self.total_q) > 1e-9 * max(1.0, abs(self.total_q)):
            raise ValueError(f"loss parts sum to {parts}, total says {self.total_q}")
        return self


class BranchTightness(BaseModel):
    model_config = ConfigDict(frozen=True)

    power_slack: float = Field(..., description="(Vs*Is - Q - V_load*I) / (Vs*Is)")
    vi_slack_before: float = Field(..., description="f(Is) - Vs as returned by the solver")
    vi_slack_after: float


class DispatchPlan(BaseModel):
    """Final answer of one dispatch: the operating point plus everything derived from it."""
    model_config = ConfigDict(frozen=True)

    names: Tuple[str, ...]
    point: OperatingPoint
    gains: Tuple[float, ...]
    g_max: Tuple[float, ...]
    duties: Tuple[float, ...]
    losses: Tuple[LossBreakdown, ...]
    circulating: Tuple[float, ...]
    total_cost: float
    tightness: Tuple[BranchTightness, ...]
    solver_iterations: int = 0


class SteadyStateResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    point: OperatingPoint
    losses: Tuple[LossBreakdown, ...]
    converged: bool
    residual: float
    iterations: int


class SweepRow(BaseModel):
    """One load-voltage point of a sweep; cost and currents are None when the solve failed."""
    model_config = ConfigDict(frozen=True)

    v_load: float
    cost: Optional[float] = None
    currents: Optional[Tuple[float, ...]] = None
    error: Optional[str] = None


class Deviation(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_relative: float
    branch: Optional[int] = Field(None, description="Branch index of the worst entry; None for V_load")
    field: str


# --- REQUEST MODELS (knobs) ---


class SolverSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    tol_gap: float = Field(1e-9, gt=0, description="Relative duality-gap target")
    tol_feas: float = Field(1e-9, gt=0, description="Primal and dual residual target")
    max_iters: int = Field(200, ge=1, description="Iteration budget of one interior-point run")
    mu: float = Field(10.0, gt=1, description="Barrier parameter factor: t = mu * m / gap")
    t0: float = Field(1.0, gt=0, description="Initial barrier parameter; sets the starting duals")
    slack_margin: float = Field(1e-6, gt=0, description="Strict-feasibility margin of the phase-I point")
    variable_bound: float = Field(1e6, gt=0, description="Box |x_i| <= bound added to keep the iterates bounded")


class SolveRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    network: NetworkSpec
    v_load: float = Field(..., description="Load voltage, fixed before the program is built")
    include_circulating: bool = True
    enforce_vin_floor: bool = False
    settings: SolverSettings = Field(default_factory=SolverSettings)

    @model_validator(mode="after")
    def _in_range(self):
        net = self.network
        if not (net.v_load_min - 1e-12 <= self.v_load <= net.v_load_max + 1e-12):
            raise ValueError(
                f"v_load {self.v_load} outside [{net.v_load_min}, {net.v_load_max}]"
            )
        return self
