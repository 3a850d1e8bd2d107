from typing import List, Optional


class MicrogridError(Exception):
    """Base class for every failure raised by the dispatch pipeline."""


class Violation:
    """One broken rule found while validating a network."""

    def __init__(self, rule: str, message: str, branch: Optional[str] = None):
        self.rule = rule
        self.branch = branch
        self.message = message

    def __repr__(self):
        where = f"[{self.branch}] " if self.branch else ""
        return f"{self.rule}: {where}{self.message}"

    def __eq__(self, other):
        return isinstance(other, Violation) and (self.rule, self.branch) == (other.rule, other.branch)

    def __hash__(self):
        return hash((self.rule, self.branch))


class NetworkValidationError(MicrogridError):
    def __init__(self, violations: List[Violation]):
        self.violations = violations
        super().__init__("; ".join(repr(v) for v in violations))

    @property
    def rules(self) -> List[str]:
        return [v.rule for v in self.violations]


class DocumentError(MicrogridError):
    """Malformed input document (JSON, CSV)."""


class NonPhysicalPoint(MicrogridError):
    pass


class MissingInductance(MicrogridError):
    pass


class InfeasibleError(MicrogridError):
    pass


class InfeasibleBounds(InfeasibleError):
    pass


class DegenerateFit(MicrogridError):
    pass


class NegativeAlpha(MicrogridError):
    pass


class GateFailedError(MicrogridError):
    def __init__(self, branch: str, margin_1: float, margin_3: float):
        self.branch = branch
        self.margins = (margin_1, margin_3)
        super().__init__(
            f"branch {branch} fails the convexity gate: "
            f"r_eff1 - r_eff2 = {margin_1:.6g}, r_eff3 = {margin_3:.6g}"
        )


class DimensionMismatch(MicrogridError):
    pass


class GainBelowOne(MicrogridError):
    pass


class DivideByZeroVoltage(MicrogridError):
    pass


class NoConvergence(MicrogridError):
    pass


class NegativeBranchCurrent(MicrogridError):
    pass


class AllInfeasible(MicrogridError):
    pass


class TightnessAuditError(MicrogridError):
    pass


class SolverFailure(MicrogridError):
    """Raised by the facade when the solver stops without an optimum."""

    def __init__(self, solution):
        self.solution = solution
        super().__init__(f"solver stopped with status {solution.status.value}: {solution.message}")
