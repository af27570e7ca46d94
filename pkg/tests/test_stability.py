import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.model.core import solve_steady_state
from src.spectra.transfer import find_poles
from src.stability.checks import (
    MaskCode,
    Method,
    Verdict,
    check_stability,
    max_loop_gain,
    stability_map,
)
from src.stability.contour import SearchRegion, default_region, loop_gain, winding_number
from src.stability.time_domain import simulate_time_domain
from src.sweep.axes import Axis, AxisName

# Displacement angles on both sides of the cooling half-plane
SAMPLED_ANGLES = [sign * fraction * math.pi for fraction in (0.1, 0.3, 0.5, 0.7, 0.9) for sign in (-1.0, 1.0)]


def _periods_to_resolve(params, poles) -> int:
    # Enough periods for the fastest growing mode to gain a factor 1e6 in energy
    growth = max(float(np.max(poles.imag)), 1e-12)
    period = 2.0 * math.pi / params.omega_m
    return min(400_000, math.ceil(math.log(1e6) / (2.0 * growth * period)) + 100)


class TestSinglePoint:
    def test_blocked_loop_is_stable(self, defaults):
        params = defaults.with_updates(eta_loop=0.0)
        report = check_stability(solve_steady_state(params), params)
        assert report.verdict is Verdict.STABLE
        assert report.pole_count_upper_half == 0
        assert report.code == MaskCode.STABLE

    @pytest.mark.parametrize("gamma, verdict", [(-math.pi / 2, Verdict.STABLE), (math.pi / 2, Verdict.UNSTABLE)])
    def test_resonant_loop_sign(self, resonant_loop, gamma, verdict):
        params = resonant_loop.with_updates(gamma=gamma)
        report = check_stability(solve_steady_state(params), params)
        assert report.verdict is verdict
        assert (report.pole_count_upper_half > 0) == (verdict is Verdict.UNSTABLE)

    def test_report_dict(self, defaults):
        report = check_stability(solve_steady_state(defaults), defaults)
        data = report.to_dict()
        assert data["verdict"] in {"stable", "unstable", "marginal"}
        assert data["method"] == "argument-principle"
        assert len(data["nearest_pole"]) == 2

    @pytest.mark.parametrize("rho", [0.0, -0.5, 1.5])
    def test_rho_range(self, defaults, rho):
        with pytest.raises(ValueError):
            check_stability(solve_steady_state(defaults), defaults, method=Method.SUFFICIENT_BOUND, rho=rho)

    def test_invalid_region(self):
        with pytest.raises(ValidationError):
            SearchRegion(re_min=1.0, re_max=0.0, im_min=0.0, im_max=1.0)

    def test_default_region(self, defaults):
        region = default_region(defaults)
        assert region.re_max == pytest.approx(5.0 * defaults.kappa)
        assert region.im_max == pytest.approx(2.0 * defaults.kappa)
        assert region.im_min == pytest.approx(1e-3 * defaults.gamma_m)


class TestArgumentPrinciple:
    def test_no_zeros_without_feedback(self, defaults):
        params = defaults.with_updates(eta_loop=0.0)
        ss = solve_steady_state(params)
        result = winding_number(ss, params, default_region(params))
        assert result.zeros == 0
        assert abs(result.winding) < 0.1

    def test_count_matches_eigenvalues_without_delay(self, resonant_loop):
        # With tau = 0 the characteristic function is a polynomial and its roots are known
        params = resonant_loop.with_updates(tau=0.0, gamma=math.pi / 2)
        ss = solve_steady_state(params)
        poles = find_poles(ss, params)
        region = default_region(params)
        expected = sum(region.contains(pole) for pole in poles)
        assert winding_number(ss, params, region, seeds=list(poles)).zeros == expected


class TestSufficientBound:
    def test_zero_gain_without_feedback(self, defaults):
        params = defaults.with_updates(eta_loop=0.0)
        ss = solve_steady_state(params)
        assert max_loop_gain(ss, params) == 0.0
        np.testing.assert_array_equal(loop_gain(ss, params, np.array([0.0, params.omega_m])), 0.0)
        report = check_stability(ss, params, method=Method.SUFFICIENT_BOUND)
        assert report.verdict is Verdict.STABLE
        assert report.max_loop_gain == 0.0

    @pytest.mark.parametrize("eta_loop", [0.05, 0.3, 1.0])
    @pytest.mark.parametrize("gamma", [-math.pi / 2, 0.0, math.pi / 2])
    def test_one_sided(self, resonant_loop, eta_loop, gamma):
        params = resonant_loop.with_updates(eta_loop=eta_loop, gamma=gamma)
        ss = solve_steady_state(params)
        bound = check_stability(ss, params, method=Method.SUFFICIENT_BOUND)
        exact = check_stability(ss, params, method=Method.ARGUMENT_PRINCIPLE)
        if bound.verdict is Verdict.STABLE:
            assert exact.verdict is Verdict.STABLE
        if exact.verdict is Verdict.UNSTABLE:
            assert bound.verdict is Verdict.UNSTABLE

    def test_tighter_rho_is_more_conservative(self, resonant_loop):
        params = resonant_loop.with_updates(eta_loop=0.3)
        ss = solve_steady_state(params)
        loose = check_stability(ss, params, method=Method.SUFFICIENT_BOUND, rho=1.0)
        tight = check_stability(ss, params, method=Method.SUFFICIENT_BOUND, rho=1e-6)
        if tight.verdict is Verdict.STABLE:
            assert loose.verdict is Verdict.STABLE


class TestTimeDomain:
    @pytest.mark.parametrize("gamma", [-math.pi / 2, math.pi / 2])
    def test_agrees_with_argument_principle(self, resonant_loop, gamma):
        params = resonant_loop.with_updates(gamma=gamma)
        ss = solve_steady_state(params)
        report = check_stability(ss, params)
        poles = find_poles(ss, params)
        periods = _periods_to_resolve(params, poles) if report.verdict is Verdict.UNSTABLE else 10_000
        result = simulate_time_domain(ss, params, periods=periods)
        assert result.diverged == (report.verdict is Verdict.UNSTABLE)
        assert result.delay_steps >= 1

    def test_sampled_angles_span_both_verdicts(self, resonant_loop):
        verdicts = set()
        for gamma in SAMPLED_ANGLES:
            params = resonant_loop.with_updates(gamma=gamma)
            verdicts.add(check_stability(solve_steady_state(params), params).verdict)
        assert {Verdict.STABLE, Verdict.UNSTABLE} <= verdicts

    @pytest.mark.slow
    @pytest.mark.parametrize("gamma", SAMPLED_ANGLES)
    def test_sampled_angles_agree_with_integration(self, resonant_loop, gamma):
        params = resonant_loop.with_updates(gamma=gamma)
        ss = solve_steady_state(params)
        report = check_stability(ss, params)
        if report.verdict is Verdict.MARGINAL:
            pytest.skip("marginal point has no time-domain verdict")
        periods = 10_000
        if report.verdict is Verdict.UNSTABLE:
            periods = max(periods, _periods_to_resolve(params, find_poles(ss, params)))
        result = simulate_time_domain(ss, params, periods=periods)
        assert result.diverged == (report.verdict is Verdict.UNSTABLE)

    def test_no_feedback_decays(self, defaults):
        params = defaults.with_updates(eta_loop=0.0)
        result = simulate_time_domain(solve_steady_state(params), params, periods=10_000)
        assert not result.diverged
        assert result.energy_ratio < 1.0

    def test_invalid_arguments(self, defaults):
        with pytest.raises(ValueError):
            simulate_time_domain(solve_steady_state(defaults), defaults, periods=0)


class TestStabilityMap:
    def test_small_map(self, resonant_loop):
        axis1 = Axis(name=AxisName.ETA_LOOP, values=[0.0, 0.5])
        axis2 = Axis(name=AxisName.OMEGA_M_TAU, values=[0.2 * math.pi, 0.4 * math.pi])
        result = stability_map(resonant_loop, axis1, axis2, threads=1, show_progress=False)
        assert result.codes.shape == (2, 2)
        assert np.all(result.codes[0] == MaskCode.STABLE)
        assert set(np.unique(result.codes)) <= {int(code) for code in MaskCode}
        assert not result.errors
        np.testing.assert_array_equal(result.stable, result.codes == MaskCode.STABLE)

    def test_threads_do_not_change_codes(self, resonant_loop):
        axis1 = Axis(name=AxisName.GAMMA, values=[-math.pi / 2, 0.0, math.pi / 2])
        axis2 = Axis(name=AxisName.OMEGA_M_TAU, values=[0.1 * math.pi, 0.5 * math.pi])
        serial = stability_map(resonant_loop, axis1, axis2, threads=1, show_progress=False)
        threaded = stability_map(resonant_loop, axis1, axis2, threads=3, show_progress=False)
        np.testing.assert_array_equal(serial.codes, threaded.codes)
