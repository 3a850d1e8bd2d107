import numpy as np
import pytest
from scipy.optimize import brentq

from app.errors import DegenerateFit, InfeasibleError, MissingInductance, NegativeAlpha, NonPhysicalPoint
from app.lossmodel import (
    GAIN_CAP,
    branch_loss,
    ccm_min_source_current,
    circulating_currents,
    convexity_gate,
    effective_resistances,
    estimate_alpha,
    fit_diode,
    grouped_loss,
    loss_coefficients,
    max_gain_bound,
    min_output_current,
    mosfet_test_loss,
    switching_alpha,
)
from app.models import PwlCurve
from app.netmodel import pwl_eval

from .factories import REFERENCE, build_branch, random_branch


@pytest.fixture
def textbook_branch():
    return build_branch(rs=0.5, r_l=1.0, r_m=0.2, r_d=0.03, r_cable=1.0, alpha=0.005)


class TestEffectiveResistances:

    def test_direct_substitution(self, textbook_branch):
        reff = effective_resistances(textbook_branch)
        assert reff.r_eff1 == pytest.approx(1.70015, rel=1e-12)
        assert reff.r_eff2 == pytest.approx(0.0850125, rel=1e-12)
        assert reff.r_eff3 == pytest.approx(0.415, rel=1e-12)
        assert reff.sign == 1.0

    def test_lossless(self):
        reff = effective_resistances(build_branch())
        assert (reff.r_eff1, reff.r_eff2, reff.r_eff3) == (0.0, 0.0, 0.0)

    def test_equal_switch_resistances(self):
        reff = effective_resistances(build_branch(r_m=0.02, r_d=0.02, r_cable=0.4, alpha=0.01))
        assert reff.r_eff2 == pytest.approx(0.01 ** 2 * 0.4 / 2)
        assert reff.r_eff3 == pytest.approx(0.2)


class TestConvexityGate:

    def test_pass_with_margins(self, textbook_branch):
        gate = convexity_gate(textbook_branch)
        assert gate.passed
        assert gate.margin_1 == pytest.approx(1.6151375)
        assert gate.margin_3 == pytest.approx(0.415)

    def test_fail_on_short_cable(self):
        gate = convexity_gate(build_branch(r_m=0.5, r_d=0.0, r_cable=0.1))
        assert not gate.passed
        assert gate.margin_3 == pytest.approx(-0.2)

    def test_case_i_branch_1(self, case_i):
        b = case_i.branches[0]
        reff = effective_resistances(b)
        assert convexity_gate(b).passed
        assert reff.r_eff1 == pytest.approx(0.5590364)
        assert reff.r_eff3 == pytest.approx(0.0975)


class TestBranchLoss:

    def test_ideal_converter(self):
        assert branch_loss(build_branch(), 8.0, 3.0, 70.0).total_q == 0.0

    def test_grouped_form_equals_breakdown(self, rng):
        for _ in range(1000):
            b = random_branch(rng, "b")
            i_out = rng.uniform(0, 10)
            i_s = i_out + rng.uniform(0, 10)
            v = rng.uniform(40, 90)
            total = branch_loss(b, i_s, i_out, v).total_q
            assert grouped_loss(b, i_s, i_out, v) == pytest.approx(total, rel=1e-9)
            assert loss_coefficients(b, v).evaluate(i_s, i_out) == pytest.approx(total, rel=1e-9)

    def test_reference_power_balance(self, case_iib):
        """At the tight optimum the loss is exactly generation minus delivered power."""
        q = branch_loss(case_iib.branches[0], 8.8644, 5.5540, 70.0).total_q
        assert q == pytest.approx(50 * 8.8644 - 70 * 5.5540, abs=0.01)

    def test_reference_loss_columns(self, case_iib):
        cols = REFERENCE["case_iib"]
        mosfet = (1.9218, 1.5315, 2.0358)
        diode = (3.9165, 2.8280, 2.9824)
        for k, b in enumerate(case_iib.branches):
            losses = branch_loss(b, cols["i_s"][k], cols["i_out"][k], cols["v_load"])
            # the MOSFET column includes its switching loss
            assert losses.mosfet_conduction + losses.switching == pytest.approx(mosfet[k], abs=5e-4)
            # reported diode losses sit within 0.05% of the model
            assert losses.diode_conduction == pytest.approx(diode[k], rel=1e-3)

    def test_parts_non_negative(self, rng):
        for _ in range(100):
            b = random_branch(rng, "b")
            i_out = rng.uniform(0, 10)
            losses = branch_loss(b, i_out + rng.uniform(0, 5), i_out, 60.0)
            parts = [losses.source_and_inductor, losses.mosfet_conduction, losses.diode_conduction,
                     losses.cable, losses.switching]
            assert min(parts) >= 0

    def test_jointly_convex_under_gate(self, rng):
        for _ in range(200):
            b = random_branch(rng, "b")
            coef = loss_coefficients(b, 60.0)
            a, c = rng.uniform(0, 10, size=2), rng.uniform(0, 10, size=2)
            t = rng.uniform()
            mid = t * a + (1 - t) * c
            lhs = coef.evaluate(*mid)
            rhs = t * coef.evaluate(*a) + (1 - t) * coef.evaluate(*c)
            assert lhs <= rhs + 1e-9

    def test_source_current_below_output(self):
        with pytest.raises(NonPhysicalPoint):
            branch_loss(build_branch(), 2.0, 3.0, 50.0)


class TestSwitchingAlpha:

    def test_hundred_nanoseconds(self):
        assert switching_alpha(50e-9, 50e-9, 1e5) == pytest.approx(0.005)

    def test_zero_transitions(self):
        assert switching_alpha(0.0, 0.0, 1e5) == 0.0

    def test_reference_converter(self):
        assert switching_alpha(15e-9, 15e-9, 142900) == pytest.approx(0.002143, abs=1e-6)


class TestCcmBound:

    def test_example(self):
        b = build_branch(curve=PwlCurve.constant(50.0), inductance=1e-3)
        assert ccm_min_source_current(b, 1e5) == pytest.approx(2.5)

    def test_frequency_scaling(self):
        b = build_branch(curve=PwlCurve.constant(50.0), inductance=1e-3)
        assert ccm_min_source_current(b, 2e5) == pytest.approx(ccm_min_source_current(b, 1e5) / 2)

    def test_missing_inductance(self):
        with pytest.raises(MissingInductance):
            ccm_min_source_current(build_branch(), 1e5)


class TestMinOutputCurrent:

    def test_power_conservation_when_ideal(self):
        b = build_branch(curve=PwlCurve.constant(40.0))
        assert min_output_current(b, 3.0, 60.0) == pytest.approx(40.0 * 3.0 / 60.0)

    def test_zero_source_current(self, case_i):
        assert min_output_current(case_i.branches[0], 0.0, 50.0) == 0.0

    def test_round_trip_on_reference_bound(self, case_i):
        b = case_i.branches[0]
        is_min = brentq(lambda x: min_output_current(b, x, 50.0) - 0.6613, 1e-6, 2.0)
        i_min = min_output_current(b, is_min, 50.0)
        assert i_min == pytest.approx(0.6613, abs=1e-6)
        generated = pwl_eval(b.curve, is_min) * is_min
        delivered = loss_coefficients(b, 50.0).evaluate(is_min, i_min) + 50.0 * i_min
        assert generated == pytest.approx(delivered, rel=1e-9)

    def test_no_positive_root(self):
        # losses alone exceed what the source can generate at this current
        b = build_branch(curve=PwlCurve.constant(1.0), rs=5.0, r_cable=0.1)
        with pytest.raises(InfeasibleError):
            min_output_current(b, 2.0, 50.0)


class TestMaxGainBound:

    @pytest.mark.parametrize("k, reference", [(0, 4.4755), (1, 4.0702), (2, 4.0627)])
    def test_reference_bounds(self, case_i, k, reference):
        assert max_gain_bound(case_i.branches[k], case_i.r_load) == pytest.approx(reference, rel=5e-3)

    def test_lossless_cap(self):
        assert max_gain_bound(build_branch(r_cable=0.2), 5.0) == GAIN_CAP

    def test_decreases_with_parasitics(self, case_i):
        b = case_i.branches[0]
        base = max_gain_bound(b, 5.0)
        for field in ("r_l", "r_m", "r_d"):
            worse = b.model_copy(update={field: getattr(b, field) * 2 + 0.01})
            assert max_gain_bound(worse, 5.0) < base


class TestCirculatingCurrents:

    def test_equal_voltages(self):
        np.testing.assert_allclose(circulating_currents([50.0, 50.0, 50.0], [0.2, 0.25, 0.23]), 0.0, atol=1e-12)

    def test_two_branches(self):
        np.testing.assert_allclose(circulating_currents([51.0, 50.0], [1.0, 1.0]), [0.5, -0.5])

    def test_antisymmetric_pair(self, rng):
        ic = circulating_currents(rng.uniform(50, 52, size=2), rng.uniform(0.1, 0.3, size=2))
        assert ic.sum() == pytest.approx(0.0, abs=1e-12)


class TestFitDiode:

    def test_noiseless_recovery(self):
        current = np.linspace(0.5, 10, 20)
        samples = zip(current, 0.5418 * current + 0.0184 * current ** 2)
        v_d, r_d = fit_diode(samples)
        assert v_d == pytest.approx(0.5418, abs=1e-9)
        assert r_d == pytest.approx(0.0184, abs=1e-9)

    def test_two_exact_samples(self):
        v_d, r_d = fit_diode([(1.0, 0.7), (2.0, 1.48)])
        assert v_d == pytest.approx(0.66)
        assert r_d == pytest.approx(0.04)

    def test_noisy_fit_beats_truth(self, rng):
        current = np.linspace(0.5, 10, 40)
        power = 0.6 * current + 0.02 * current ** 2 + rng.normal(0, 0.01, size=current.size)
        v_d, r_d = fit_diode(zip(current, power))
        fitted = np.linalg.norm(power - v_d * current - r_d * current ** 2)
        truth = np.linalg.norm(power - 0.6 * current - 0.02 * current ** 2)
        assert fitted <= truth

    def test_constant_current_is_degenerate(self):
        with pytest.raises(DegenerateFit):
            fit_diode([(2.0, 1.3), (2.0, 1.31), (2.0, 1.29)])


class TestEstimateAlpha:

    ARGS = dict(v_load=70.0, v_d=0.5418, r_cable=0.2, r_d=0.0184, r_m=0.019, r_load=5.0)

    def test_inverts_forward_model(self):
        p_loss = mosfet_test_loss(0.002143, **self.ARGS)
        assert estimate_alpha(p_loss, **self.ARGS) == pytest.approx(0.002143, rel=1e-12)

    def test_conduction_only(self):
        i3 = 70.0 / 15.0
        assert estimate_alpha(0.5 * i3 ** 2 * 0.019, **self.ARGS) == pytest.approx(0.0, abs=1e-15)

    def test_linear_in_switching_share(self):
        conduction = mosfet_test_loss(0.0, **self.ARGS)
        one = estimate_alpha(conduction + 1.0, **self.ARGS)
        two = estimate_alpha(conduction + 2.0, **self.ARGS)
        assert two == pytest.approx(2 * one)

    def test_negative_alpha(self):
        with pytest.raises(NegativeAlpha):
            estimate_alpha(0.01, **self.ARGS)
