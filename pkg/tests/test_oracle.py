import numpy as np
import pytest

from app.core import DispatchEngine
from app.errors import AllInfeasible, NegativeBranchCurrent, NoConvergence
from app.lossmodel import loss_coefficients
from app.models import BranchState, OperatingPoint
from app.oracle import compare_points, grid_search, steady_state

from .factories import REFERENCE, build_branch, build_network, reference_point, random_network

# Equivalent-circuit simulation of the second case: (Is, V', V'', I) per branch.
CIRCUIT_IIB = {
    "v_load": 69.997,
    "i_s": (8.8648, 7.2405, 8.6128),
    "v_in": (45.568, 42.104, 36.124),
    "v_out": (71.108, 71.045, 70.976),
    "i_out": (5.5536, 4.1899, 4.2561),
}


def _reference_gains(case):
    cols = REFERENCE[case]
    return [vo / vi for vo, vi in zip(cols["v_out"], cols["v_in"])]


def _columns_point(cols):
    states = tuple(
        BranchState(vs=50.0, v_in=cols["v_in"][k], v_out=cols["v_out"][k], i_s=cols["i_s"][k], i_out=cols["i_out"][k])
        for k in range(3)
    )
    return OperatingPoint(branches=states, v_load=cols["v_load"])


class TestSteadyState:

    def test_ideal_single(self, ideal_single):
        ss = steady_state(ideal_single, [2.0])
        state = ss.point.branches[0]
        assert ss.point.v_load == pytest.approx(20.0)
        assert state.i_out == pytest.approx(5.0)
        assert state.i_s == pytest.approx(10.0)
        assert ss.converged

    def test_two_ideal_branches_share(self):
        net = build_network([build_branch("a"), build_branch("b")], r_load=4.0, v_min=20.0, v_max=24.0)
        ss = steady_state(net, [2.0, 2.0])
        np.testing.assert_allclose(ss.point.column("i_out"), [2.5, 2.5])

    def test_ideal_branches_disagree(self):
        net = build_network([build_branch("a"), build_branch("b")], r_load=4.0, v_min=20.0, v_max=24.0)
        with pytest.raises(NoConvergence):
            steady_state(net, [2.0, 2.2])

    @pytest.mark.parametrize("case", sorted(REFERENCE))
    def test_settles_at_reference_load_voltage(self, request, case):
        net = request.getfixturevalue(case)
        ss = steady_state(net, _reference_gains(case))
        assert ss.converged
        assert ss.point.v_load == pytest.approx(REFERENCE[case]["v_load"], rel=1e-3)
        assert np.all(ss.point.column("i_out") > 0)

    def test_reproduces_reference_optimum(self, case_iib):
        ss = steady_state(case_iib, _reference_gains("case_iib"))
        assert ss.converged
        assert ss.point.v_load == pytest.approx(70.0, rel=1e-3)
        reference = reference_point("case_iib", case_iib)
        for field in ("i_s", "i_out", "v_in", "v_out"):
            np.testing.assert_allclose(ss.point.column(field), reference.column(field), rtol=2e-3)

    def test_conservation(self, case_i):
        ss = steady_state(case_i, _reference_gains("case_i"))
        v = ss.point.v_load
        assert ss.point.column("i_out").sum() == pytest.approx(v / case_i.r_load, abs=1e-8)
        for b, s in zip(case_i.branches, ss.point.branches):
            generated = s.vs * s.i_s
            q = loss_coefficients(b, v).evaluate(s.i_s, s.i_out)
            assert generated - q - v * s.i_out == pytest.approx(0.0, abs=1e-8 * generated)
            assert s.v_out == pytest.approx(v + s.i_out * b.r_cable)

    def test_loss_breakdown_matches_point(self, case_iib):
        ss = steady_state(case_iib, _reference_gains("case_iib"))
        for losses, s in zip(ss.losses, ss.point.branches):
            assert losses.total_q == pytest.approx(s.vs * s.i_s - ss.point.v_load * s.i_out, rel=1e-7)

    def test_higher_gain_raises_load_voltage(self, case_iib):
        gains = _reference_gains("case_iib")
        base = steady_state(case_iib, gains).point.v_load
        gains[0] *= 1.01
        assert steady_state(case_iib, gains).point.v_load > base

    def test_permutation_invariant(self, case_iii):
        gains = _reference_gains("case_iii")
        forward = steady_state(case_iii, gains)
        flipped = case_iii.model_copy(update={"branches": tuple(reversed(case_iii.branches))})
        backward = steady_state(flipped, list(reversed(gains)))
        assert backward.point.v_load == pytest.approx(forward.point.v_load, rel=1e-10)
        np.testing.assert_allclose(backward.point.column("i_out")[::-1], forward.point.column("i_out"), rtol=1e-8)

    def test_blocked_branch(self, case_iib):
        gains = _reference_gains("case_iib")
        gains[2] = 1.0
        with pytest.raises(NegativeBranchCurrent):
            steady_state(case_iib, gains)

    def test_bad_gains(self, case_iib):
        with pytest.raises(ValueError):
            steady_state(case_iib, [1.5, 1.5])
        with pytest.raises(ValueError):
            steady_state(case_iib, [1.5, 0.9, 1.5])


class TestCompare:

    def test_identical(self, case_iib):
        point = reference_point("case_iib", case_iib)
        dev = compare_points(point, point)
        assert dev.max_relative == 0.0
        assert dev.field == "v_load"
        assert dev.branch is None

    def test_equivalent_circuit_agreement(self):
        """The reference optimum and its circuit simulation differ by under 5e-4 everywhere."""
        dev = compare_points(_columns_point(REFERENCE["case_iib"]), _columns_point(CIRCUIT_IIB))
        assert dev.max_relative <= 5e-4
        assert (dev.field, dev.branch) == ("i_s", 1)

    def test_branch_count_mismatch(self, case_iib):
        with pytest.raises(ValueError):
            compare_points(reference_point("case_iib", case_iib),
                           OperatingPoint(branches=reference_point("case_iib", case_iib).branches[:1], v_load=70.0))


class TestGridSearch:

    def test_ideal_single_costs_nothing(self, ideal_single):
        best = grid_search(ideal_single, 20.0, resolution=50)
        assert best.cost == 0.0
        assert best.gains == pytest.approx((2.0,))
        assert best.feasible == 1
        assert best.evaluated == 50

    def test_unit_gains_cannot_reach_load(self, case_i):
        with pytest.raises(AllInfeasible):
            grid_search(case_i, 50.0, resolution=1)

    def test_parallel_matches_serial(self, rng):
        net = random_network(rng, v_span=40.0)
        serial = grid_search(net, 50.0, resolution=8)
        parallel = grid_search(net, 50.0, resolution=8, workers=4)
        assert (serial.gains, serial.cost, serial.feasible) == (parallel.gains, parallel.cost, parallel.feasible)

    def test_resolution_must_be_positive(self, ideal_single):
        with pytest.raises(ValueError):
            grid_search(ideal_single, 20.0, resolution=0)


def _check_solver_not_beaten(net, resolution, cells):
    plan = DispatchEngine(net).solve()
    best = grid_search(net, net.v_load_min, resolution)
    assert plan.total_cost <= best.cost + 1e-4
    cell = (np.asarray(plan.g_max) - 1.0) / (resolution - 1)
    assert np.all(np.abs(np.asarray(best.gains) - np.asarray(plan.gains)) <= cells * cell + 1e-9)


class TestSolverAgainstGrid:

    def test_random_two_branch(self, rng):
        for _ in range(3):
            _check_solver_not_beaten(random_network(rng, v_span=40.0), resolution=15, cells=3)

    @pytest.mark.slow
    def test_fifty_networks_fine_grid(self, rng):
        for _ in range(50):
            _check_solver_not_beaten(random_network(rng), resolution=200, cells=2)
