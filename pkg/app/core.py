from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple
import logging

import numpy as np

from .conic_solver import SolveStatus, solve
from .errors import InfeasibleError, MicrogridError, SolverFailure
from .models import Deviation, DispatchPlan, NetworkSpec, SolveRequest, SolverSettings, SteadyStateResult, SweepRow
from .netmodel import validate_network
from .oracle import compare, steady_state
from .posttighten import assemble_plan, check_tightness
from .relaxation import build_program, point_from_vector

logger = logging.getLogger(__name__)

MONOTONE_TOL = 1e-7


class DispatchEngine:
    """
    The one entry point for a network: validate once, then solve, sweep or
    verify against the steady-state oracle.
    """

    def __init__(
        self,
        network: NetworkSpec,
        settings: Optional[SolverSettings] = None,
        include_circulating: bool = True,
        enforce_vin_floor: bool = False,
        strict_audit: bool = False,
        duty_resolution: Optional[int] = None,
    ):
        self.network = validate_network(network)
        self.settings = settings or SolverSettings()
        self.include_circulating = include_circulating
        self.enforce_vin_floor = enforce_vin_floor
        self.strict_audit = strict_audit
        self.duty_resolution = duty_resolution
        logger.info(f"Network validated: {len(network.branches)} branches, R_load={network.r_load}.")

    def solve(self, v_load: Optional[float] = None) -> DispatchPlan:
        """
        Optimal dispatch at a fixed load voltage (the minimum allowed one by
        default, where the optimal cost is lowest).
        """
        v = self.network.v_load_min if v_load is None else v_load
        req = SolveRequest(
            network=self.network,
            v_load=v,
            include_circulating=self.include_circulating,
            enforce_vin_floor=self.enforce_vin_floor,
            settings=self.settings,
        )
        prog = build_program(req)
        solution = solve(prog, self.settings)
        if solution.status is SolveStatus.INFEASIBLE:
            raise InfeasibleError(f"no feasible dispatch at V_load={v}: {solution.message}")
        if solution.status is not SolveStatus.OPTIMAL:
            raise SolverFailure(solution)

        plan = assemble_plan(
            self.network,
            point_from_vector(prog, solution.x),
            prog.g_max,
            include_circulating=self.include_circulating,
            duty_resolution=self.duty_resolution,
            solver_iterations=solution.iterations,
        )
        check_tightness([t.power_slack for t in plan.tightness], plan.names, strict=self.strict_audit)
        return plan

    def _sweep_row(self, v: float) -> SweepRow:
        try:
            plan = self.solve(v)
        except MicrogridError as e:
            logger.warning(f"Sweep point V_load={v:.6g} failed: {e}")
            return SweepRow(v_load=v, error=str(e))
        return SweepRow(v_load=v, cost=plan.total_cost, currents=tuple(plan.point.column("i_out")))

    def sweep(self, points: int, workers: Optional[int] = None) -> Tuple[List[SweepRow], bool]:
        """
        Solve at `points` evenly spaced load voltages. Returns the rows in
        ascending V_load and whether the successful costs are non-decreasing.
        """
        if points < 2:
            raise ValueError("a sweep needs at least 2 points")
        grid = [float(v) for v in np.linspace(self.network.v_load_min, self.network.v_load_max, points)]
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(self._sweep_row, grid))
        else:
            rows = [self._sweep_row(v) for v in grid]

        costs = [r.cost for r in rows if r.cost is not None]
        monotone = all(b >= a - MONOTONE_TOL * max(1.0, abs(a)) for a, b in zip(costs, costs[1:]))
        if not monotone:
            logger.warning("Optimal cost is not non-decreasing in V_load over the sweep.")
        return rows, monotone

    def verify(self, plan: DispatchPlan) -> Tuple[SteadyStateResult, Deviation]:
        """Re-simulate the plan's gains and report the worst deviation from the plan."""
        if tuple(plan.names) != self.network.names:
            raise ValueError(f"plan branches {plan.names} do not match network {self.network.names}")
        ss = steady_state(self.network, plan.gains)
        dev = compare(plan, ss)
        logger.info(f"Verification: worst deviation {dev.max_relative:.3e} in {dev.field}.")
        return ss, dev
