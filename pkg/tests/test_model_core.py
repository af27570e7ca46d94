import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.model.core import (
    cooling_factor,
    delay_split,
    drift_matrix,
    drift_stack,
    effective_temperature,
    input_coupling_stack,
    noise_model,
    solve_steady_state,
    steady_state_residuals,
    thermal_occupation,
)
from src.model.params import HBAR, K_B, TWO_PI, SystemParams, frequency_noise_to_model


def _transcribed_drift(ss, params, omega):
    """Linearized equations of motion written out entry by entry."""
    g_h, g_v = abs(ss.g_h), abs(ss.g_v)
    k2 = params.kappa / 2
    d_h, d_v = ss.delta_h_eff, ss.delta_v_eff
    f = math.sqrt(params.eta_loop) * params.kappa_in * np.exp(1j * omega * params.tau)
    c, s = math.cos(ss.gamma_angle), math.sin(ss.gamma_angle)
    Q, P, Xh, Yh, Xv, Yv = range(6)
    entries = {
        (Q, P): params.omega_m,
        (P, Q): -params.omega_m,
        (P, P): -params.gamma_m,
        (P, Xh): -2 * g_h,
        (P, Xv): -2 * g_v,
        (Xh, Xh): -k2,
        (Xh, Yh): -d_h,
        (Yh, Q): -2 * g_h,
        (Yh, Xh): d_h,
        (Yh, Yh): -k2,
        (Xv, Xh): -f * c,
        (Xv, Yh): -f * s,
        (Xv, Xv): -k2,
        (Xv, Yv): -d_v,
        (Yv, Q): -2 * g_v,
        (Yv, Xh): f * s,
        (Yv, Yh): -f * c,
        (Yv, Xv): d_v,
        (Yv, Yv): -k2,
    }
    matrix = np.zeros((6, 6), dtype=complex)
    for (row, col), value in entries.items():
        matrix[row, col] = value
    return matrix


class TestThermal:
    def test_bose_factor(self):
        omega = TWO_PI * 1.14e6
        expected = 1.0 / math.expm1(HBAR * omega / (K_B * 300.0))
        assert thermal_occupation(300.0, omega) == pytest.approx(expected, rel=1e-12)

    def test_room_temperature_occupation(self, defaults):
        n_bar_in = thermal_occupation(defaults.bath_temperature, defaults.omega_m)
        assert n_bar_in == pytest.approx(5.5e6, rel=0.01)
        classical = K_B * defaults.bath_temperature / (HBAR * defaults.omega_m) - 0.5
        assert n_bar_in == pytest.approx(classical, rel=1e-9)

    def test_zero_temperature(self):
        assert thermal_occupation(0.0, TWO_PI * 1e6) == 0.0

    @pytest.mark.parametrize("temperature, omega", [(-1.0, 1e6), (300.0, 0.0), (math.inf, 1e6)])
    def test_invalid_inputs(self, temperature, omega):
        with pytest.raises(ValueError):
            thermal_occupation(temperature, omega)

    def test_effective_temperature(self):
        assert effective_temperature(166.0, TWO_PI * 1.14e6) == pytest.approx(9.1e-3, rel=0.01)
        assert effective_temperature(0.0, TWO_PI * 1.14e6) == 0.0

    def test_effective_temperature_inverts_occupation(self):
        omega = TWO_PI * 1.14e6
        n_bar = thermal_occupation(0.05, omega)
        assert effective_temperature(n_bar, omega) == pytest.approx(0.05, rel=1e-10)

    def test_cooling_factor(self):
        assert cooling_factor(5.5e6, 166.0) == pytest.approx(3.3e4, rel=0.01)
        with pytest.raises(ValueError):
            cooling_factor(5.5e6, 0.0)


class TestParams:
    def test_derived_damping(self, defaults):
        assert defaults.gamma_m == pytest.approx(TWO_PI * 0.01, rel=0.05)
        assert defaults.gamma_m == pytest.approx(defaults.omega_m / defaults.q_factor, rel=1e-14)

    def test_escape_efficiency(self, defaults):
        assert defaults.kappa_in / defaults.kappa == pytest.approx(0.68)

    def test_kappa_in_above_kappa_rejected(self, defaults):
        with pytest.raises(ValidationError):
            defaults.with_updates(kappa_in=2.0 * defaults.kappa)

    def test_detection_bounded_by_visibility(self, defaults):
        assert defaults.eta_det <= defaults.eta_hom
        with pytest.raises(ValidationError):
            defaults.with_updates(eta_hom=0.5 * defaults.eta_det)
        with pytest.raises(ValidationError):
            defaults.with_updates(eta_det=1.0)

    def test_unknown_field_rejected(self, defaults):
        data = defaults.model_dump()
        data["finesse"] = 27_000
        with pytest.raises(ValidationError):
            SystemParams.model_validate(data)

    @pytest.mark.parametrize(
        "text, expected",
        [("-0.85pi", -0.85 * math.pi), ("pi/4", math.pi / 4), ("-153deg", math.radians(-153.0)), ("0.5", 0.5)],
    )
    def test_angle_strings(self, defaults, text, expected):
        assert defaults.with_updates(gamma=text).gamma == pytest.approx(expected)

    def test_two_pi_rate_string(self, defaults):
        params = defaults.with_updates(omega_m="2pi*1.2e6")
        assert params.omega_m == pytest.approx(TWO_PI * 1.2e6)
        assert params.gamma_m == pytest.approx(params.omega_m / params.q_factor)

    def test_bad_angle_string(self, defaults):
        with pytest.raises(ValidationError):
            defaults.with_updates(gamma="quarter turn")

    def test_json_round_trip(self, defaults):
        assert SystemParams.model_validate_json(defaults.model_dump_json()) == defaults

    def test_frequency_noise_conversion(self):
        assert frequency_noise_to_model(0.2) == pytest.approx(TWO_PI**3 * 0.2)
        with pytest.raises(ValueError):
            frequency_noise_to_model(-1.0)


class TestSteadyState:
    def test_residuals_vanish(self, defaults):
        ss = solve_steady_state(defaults)
        residuals = steady_state_residuals(ss, defaults)
        assert max(residuals.values()) < 1e-8

    def test_no_coupling_no_displacement(self, defaults):
        ss = solve_steady_state(defaults.with_updates(g0_h=0.0, g0_v=0.0))
        assert ss.mean_q == 0.0
        assert ss.g_h == 0.0 and ss.g_v == 0.0
        assert ss.delta_h_eff == defaults.delta_h

    def test_radiation_pressure_shifts_detuning(self, defaults):
        ss = solve_steady_state(defaults)
        assert ss.mean_q > 0
        assert ss.delta_h_eff < defaults.delta_h

    def test_gamma_override(self, defaults):
        ss = solve_steady_state(defaults)
        assert ss.gamma_angle == pytest.approx(-0.85 * math.pi)


class TestMatrices:
    def test_drift_matches_transcription(self, defaults):
        ss = solve_steady_state(defaults)
        for omega in (0.0, defaults.omega_m, 3.3 * defaults.kappa, 1e5 + 2e4j):
            np.testing.assert_allclose(
                drift_matrix(ss, defaults, omega).entries,
                _transcribed_drift(ss, defaults, omega),
                rtol=1e-14,
                atol=1e-14 * defaults.kappa,
            )

    def test_delay_split_structure(self, defaults):
        ss = solve_steady_state(defaults)
        a_now, a_delayed = delay_split(ss, defaults)
        assert np.all(a_delayed[:4] == 0.0)
        assert np.all(a_delayed[:, [0, 1, 4, 5]] == 0.0)
        omegas = np.array([0.0, defaults.omega_m, -2.0 * defaults.omega_m])
        stack = drift_stack(ss, defaults, omegas)
        for matrix, omega in zip(stack, omegas):
            np.testing.assert_allclose(matrix, a_now + np.exp(1j * omega * defaults.tau) * a_delayed)

    def test_blocked_loop_has_no_delayed_part(self, defaults):
        params = defaults.with_updates(eta_loop=0.0)
        _, a_delayed = delay_split(solve_steady_state(params), params)
        assert np.all(a_delayed == 0.0)

    def test_input_coupling_feedback_columns(self, defaults):
        ss = solve_steady_state(defaults)
        coupling = input_coupling_stack(ss, defaults, np.array([defaults.omega_m]))[0]
        root_fb = math.sqrt(defaults.eta_loop * defaults.kappa_in)
        factor = np.exp(1j * defaults.omega_m * defaults.tau)
        assert coupling[4, 1] == pytest.approx(root_fb * factor * math.cos(ss.gamma_angle))
        assert coupling[5, 2] == pytest.approx(root_fb * factor * math.cos(ss.gamma_angle))
        assert coupling[1, 0] == pytest.approx(math.sqrt(2.0 * defaults.gamma_m))

    def test_noise_model(self, defaults):
        noise = noise_model(defaults, 10.0)
        np.testing.assert_allclose(noise.m_xi, noise.m_xi.conj().T)
        assert noise.m_xi[0, 0] == 10.5
        assert np.all(np.linalg.eigvalsh(noise.m_xi) >= -1e-15)
        assert noise.m_xi[7, 7] == defaults.s_dd_h
        with pytest.raises(ValueError):
            noise_model(defaults, -1.0)
