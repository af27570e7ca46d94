import math

import numpy as np
import pytest

from src.errors import FitDiverged, UndefinedHomodynePhase
from src.fit.stages import StageName, configure_stage, peak_grid
from src.fit.uncertainty import AreaInputs, combine_area_ratio
from src.model.core import (
    drift_matrix,
    input_coupling_stack,
    noise_model,
    solve_steady_state,
    thermal_noise_model,
    thermal_occupation,
)
from src.model.params import TWO_PI
from src.spectra.area import fit_lorentzian, lorentzian, phonons_from_area_ratio
from src.spectra.psd import (
    FrequencyGrid,
    Normalization,
    Quantity,
    Spectrum,
    detected_psd,
    detected_spectrum,
    homodyne_phase,
    linear_window_grid,
    log_augmented_grid,
    motional_psd,
    motional_spectrum,
    qq_spectrum,
    s_qq,
    transduction_stack,
)
from src.spectra.quadrature import IntegrationPolicy, phonon_occupation
from src.spectra.transfer import (
    chi_cf_closed_form,
    find_poles,
    mechanical_pole,
    mechanical_susceptibility_stack,
    solve_transfer,
)


def _random_draw(defaults, rng):
    return defaults.with_updates(
        tau=rng.uniform(0.05, 0.95) * math.pi / defaults.omega_m,
        gamma=rng.uniform(-math.pi, math.pi),
        delta_h=rng.uniform(-0.5, 0.1) * defaults.kappa,
        delta_v=rng.uniform(-1.5, -0.2) * defaults.kappa,
        eta_loop=rng.uniform(0.0, 1.0),
        p_h_in=rng.uniform(10e-6, 100e-6),
    )


def _probe_frequencies(params):
    near = params.omega_m + np.linspace(-50.0, 50.0, 11) * params.gamma_m
    far = np.array([0.1, 0.7, 1.3, 3.0, 10.0]) * params.omega_m
    return np.concatenate([near, far, -far])


class TestSusceptibility:
    def test_closed_form_matches_inversion(self, defaults, rng):
        for _ in range(25):
            params = _random_draw(defaults, rng)
            ss = solve_steady_state(params)
            omegas = _probe_frequencies(params)
            np.testing.assert_allclose(
                chi_cf_closed_form(ss, params, omegas),
                mechanical_susceptibility_stack(ss, params, omegas),
                rtol=1e-8,
            )

    @pytest.mark.slow
    def test_closed_form_over_stable_draws(self, defaults, rng):
        stable = 0
        for _ in range(5000):
            params = _random_draw(defaults, rng)
            ss = solve_steady_state(params)
            if np.max(find_poles(ss, params).imag) >= 0:
                continue
            omegas = _probe_frequencies(params)
            near = np.abs(omegas - params.omega_m) <= 51.0 * params.gamma_m
            closed = chi_cf_closed_form(ss, params, omegas)
            inverted = mechanical_susceptibility_stack(ss, params, omegas)
            np.testing.assert_allclose(closed[~near], inverted[~near], rtol=1e-10)
            np.testing.assert_allclose(closed[near], inverted[near], rtol=1e-8)
            stable += 1
            if stable == 1000:
                break
        assert stable == 1000

    def test_transfer_row(self, defaults):
        ss = solve_steady_state(defaults)
        row = solve_transfer(ss, defaults, defaults.omega_m)
        assert row.t_vector[0] == pytest.approx(math.sqrt(2.0 * defaults.gamma_m))
        assert row.chi_cf == pytest.approx(complex(chi_cf_closed_form(ss, defaults, defaults.omega_m)), rel=1e-8)

    def test_bare_oscillator_poles(self, defaults):
        params = defaults.with_updates(g0_h=0.0, g0_v=0.0)
        ss = solve_steady_state(params)
        pole = mechanical_pole(ss, params)
        expected_real = math.sqrt(params.omega_m**2 - params.gamma_m**2 / 4)
        assert pole.real == pytest.approx(expected_real, rel=1e-9)
        assert pole.imag == pytest.approx(-params.gamma_m / 2, rel=1e-4)
        assert find_poles(ss, params).shape == (6,)


class TestSpectra:
    def test_covariance_route(self, defaults):
        ss = solve_steady_state(defaults)
        noise = thermal_noise_model(defaults)
        omegas = _probe_frequencies(defaults)
        coupling = input_coupling_stack(ss, defaults, omegas)
        expected = []
        for omega, b in zip(omegas, coupling):
            system = drift_matrix(ss, defaults, omega).entries + 1j * omega * np.eye(6)
            response = -np.linalg.inv(system) @ b
            covariance = response @ noise.m_xi @ response.conj().T
            expected.append(covariance[0, 0].real)
        np.testing.assert_allclose(s_qq(ss, defaults, noise, omegas), expected, rtol=1e-8)

    def test_s_qq_scalar(self, defaults):
        ss = solve_steady_state(defaults)
        noise = thermal_noise_model(defaults)
        value = s_qq(ss, defaults, noise, defaults.omega_m)
        assert isinstance(value, float)
        assert value > 0

    def test_detected_without_detection_is_shot_noise(self, defaults):
        params = defaults.with_updates(eta_det=0.0)
        ss = solve_steady_state(params)
        values = detected_psd(ss, params, thermal_noise_model(params), np.linspace(1e6, 1e7, 5))
        np.testing.assert_array_equal(values, 0.5)

    def test_detected_peak_above_snl(self, defaults):
        ss = solve_steady_state(defaults)
        grid = linear_window_grid(defaults.omega_m, TWO_PI * 20e3, 201)
        spec = detected_spectrum(ss, defaults, thermal_noise_model(defaults), grid)
        assert spec.normalization is Normalization.SNL_HALF
        assert spec.quantity is Quantity.S_YDET
        assert spec.values.max() > 0.5
        assert np.median(spec.values) > 0.49

    def test_no_output_field(self, defaults):
        params = defaults.with_updates(kappa_in=0.0)
        ss = solve_steady_state(params)
        with pytest.raises(UndefinedHomodynePhase):
            homodyne_phase(ss, params)

    def test_qq_spectrum_normalization(self, defaults):
        ss = solve_steady_state(defaults)
        grid = linear_window_grid(defaults.omega_m, TWO_PI * 1e3, 11)
        spec = qq_spectrum(ss, defaults, thermal_noise_model(defaults), grid)
        assert spec.normalization is Normalization.ABSOLUTE
        assert spec.quantity is Quantity.S_QQ

    def test_grids(self):
        grid = log_augmented_grid(1e6, 1e3, 21, 1e5, n_log=10)
        assert np.all(np.diff(grid.points) > 0)
        assert grid.points[0] == pytest.approx(1e6 - 1e5)
        with pytest.raises(ValueError):
            FrequencyGrid(np.array([1.0, 1.0, 2.0]))

    def test_spectrum_rejects_negative(self):
        grid = linear_window_grid(1.0, 0.5, 3)
        with pytest.raises(ValueError):
            Spectrum(grid, np.array([0.5, -0.1, 0.5]))


class TestMotionalSpectrum:
    def test_resonant_readout_transduction(self, defaults):
        params = configure_stage(defaults.with_updates(delta_h=0.0), StageName.DBC1)
        ss = solve_steady_state(params)
        assert abs(ss.delta_h_eff) < 1e-3 * params.kappa
        omegas = params.omega_m + np.linspace(-1e4, 1e4, 5)
        expected = 4.0 * params.kappa_in * abs(ss.g_h) ** 2 / (omegas**2 + params.kappa**2 / 4)
        gain = np.abs(transduction_stack(ss, params, omegas)) ** 2
        np.testing.assert_allclose(gain, expected, rtol=1e-4)

    def test_transduction_ignores_feedback_angle(self, defaults):
        omegas = np.array([defaults.omega_m])
        gains = []
        for gamma in (-0.85 * math.pi, -0.5 * math.pi):
            params = defaults.with_updates(gamma=gamma)
            gains.append(abs(transduction_stack(solve_steady_state(params), params, omegas)[0]))
        assert gains[0] == pytest.approx(gains[1], rel=5e-3)

    def test_uncoupled_readout_carries_no_motion(self, defaults):
        params = defaults.with_updates(g0_h=0.0)
        ss = solve_steady_state(params)
        values = motional_psd(ss, params, thermal_noise_model(params), _probe_frequencies(params))
        np.testing.assert_array_equal(values, 0.0)

    def test_motion_scales_position_spectrum(self, defaults):
        ss = solve_steady_state(defaults)
        noise = thermal_noise_model(defaults)
        grid = linear_window_grid(defaults.omega_m, TWO_PI * 2e3, 21)
        spec = motional_spectrum(ss, defaults, noise, grid)
        assert spec.quantity is Quantity.S_YDET_MOTION
        gain = np.abs(transduction_stack(ss, defaults, grid.points)) ** 2
        np.testing.assert_allclose(
            spec.values, defaults.eta_det * gain * s_qq(ss, defaults, noise, grid.points), rtol=1e-12
        )

    def test_area_ratio_tracks_occupation_without_loop(self, defaults):
        # Two backaction-cooled configurations, no squashing
        weak = defaults.with_updates(eta_loop=0.0, p_v_aux=135e-6)
        strong = defaults.with_updates(eta_loop=0.0)
        areas, n_bars = [], []
        for params in (weak, strong):
            ss = solve_steady_state(params)
            noise = thermal_noise_model(params)
            grid = peak_grid(params, StageName.CFC)
            areas.append(fit_lorentzian(motional_spectrum(ss, params, noise, grid)).area)
            n_bars.append(phonon_occupation(ss, params, noise).n_bar)
        estimate = phonons_from_area_ratio(n_bars[0], areas[0], areas[1])
        assert estimate == pytest.approx(n_bars[1], rel=0.01)


class TestPhononOccupation:
    def test_thermal_baseline(self, defaults):
        params = defaults.with_updates(g0_h=0.0, g0_v=0.0)
        ss = solve_steady_state(params)
        estimate = phonon_occupation(ss, params, thermal_noise_model(params))
        n_bar_in = thermal_occupation(params.bath_temperature, params.omega_m)
        assert estimate.n_bar == pytest.approx(n_bar_in, rel=0.01)
        assert estimate.n_bar == pytest.approx(5.5e6, rel=0.01)

    def test_ground_state_of_bare_oscillator(self, defaults):
        params = defaults.with_updates(g0_h=0.0, g0_v=0.0, bath_temperature=0.0)
        ss = solve_steady_state(params)
        estimate = phonon_occupation(ss, params, thermal_noise_model(params))
        assert abs(estimate.n_bar) < 1e-3

    def test_tolerance_refinement(self, defaults):
        ss = solve_steady_state(defaults)
        noise = thermal_noise_model(defaults)
        coarse = phonon_occupation(ss, defaults, noise, IntegrationPolicy(rel_tol=1e-4))
        fine = phonon_occupation(ss, defaults, noise, IntegrationPolicy(rel_tol=1e-8))
        assert coarse.n_bar == pytest.approx(fine.n_bar, rel=1e-3)
        assert fine.error <= 1e-6 * abs(fine.n_bar) + 1e-12

    def test_weak_coupling_backaction_cooling(self, weak_dbc, rng):
        for _ in range(10):
            params = weak_dbc.with_updates(
                delta_h=-rng.uniform(0.3, 1.5) * weak_dbc.omega_m,
                delta_v=-rng.uniform(0.3, 1.5) * weak_dbc.omega_m,
                p_h_in=rng.uniform(0.2e-6, 2e-6),
                p_v_aux=rng.uniform(0.2e-6, 2e-6),
            )
            ss = solve_steady_state(params)
            n_bar_in = thermal_occupation(params.bath_temperature, params.omega_m)
            kappa, omega_m = params.kappa, params.omega_m
            cooling, heating = 0.0, 0.0
            for g, detuning in ((abs(ss.g_h), ss.delta_h_eff), (abs(ss.g_v), ss.delta_v_eff)):
                cooling += g**2 * kappa / (kappa**2 / 4 + (detuning + omega_m) ** 2)
                heating += g**2 * kappa / (kappa**2 / 4 + (detuning - omega_m) ** 2)
            optical = cooling - heating
            expected = (params.gamma_m * n_bar_in + heating) / (params.gamma_m + optical)
            estimate = phonon_occupation(ss, params, noise_model(params, n_bar_in))
            assert estimate.n_bar == pytest.approx(expected, rel=0.05)

    def test_quantum_limited_cfc(self, defaults):
        params = defaults.with_updates(s_dd_h=0.0, s_dd_v=0.0)
        ss = solve_steady_state(params)
        estimate = phonon_occupation(ss, params, thermal_noise_model(params))
        assert estimate.n_bar == pytest.approx(114.0, rel=0.15)

    def test_cfc_with_technical_noise(self, defaults):
        ss = solve_steady_state(defaults)
        estimate = phonon_occupation(ss, defaults, thermal_noise_model(defaults))
        assert estimate.n_bar == pytest.approx(171.0, rel=0.2)

    def test_cfc_at_deeper_readout_detuning(self, defaults):
        params = defaults.with_updates(delta_h=-0.21 * defaults.kappa)
        ss = solve_steady_state(params)
        estimate = phonon_occupation(ss, params, thermal_noise_model(params))
        assert estimate.n_bar == pytest.approx(166.0, rel=0.2)

    def test_occupation_is_linear_in_frequency_noise(self, defaults):
        levels = [0.0, 0.5, 1.0]
        n_bars = []
        for scale in levels:
            params = defaults.with_updates(s_dd_h=scale * defaults.s_dd_h, s_dd_v=scale * defaults.s_dd_v)
            ss = solve_steady_state(params)
            n_bars.append(phonon_occupation(ss, params, thermal_noise_model(params)).n_bar)
        assert n_bars[1] == pytest.approx(0.5 * (n_bars[0] + n_bars[2]), rel=1e-4)


class TestArea:
    def test_lorentzian_area_recovered(self):
        grid = linear_window_grid(TWO_PI * 1.14e6, TWO_PI * 5e3, 801)
        values = lorentzian(grid.points, TWO_PI * 1.14e6 + 300.0, 2e3, 40.0, 0.5)
        fit = fit_lorentzian(Spectrum(grid, values))
        assert fit.area == pytest.approx(math.pi * 40.0 * 2e3, rel=1e-6)
        assert fit.halfwidth == pytest.approx(2e3, rel=1e-6)
        assert fit.offset == pytest.approx(0.5, rel=1e-6)

    def test_flat_spectrum_has_no_peak(self):
        grid = linear_window_grid(1e6, 1e4, 101)
        with pytest.raises(FitDiverged):
            fit_lorentzian(Spectrum(grid, np.full(101, 0.5)))

    def test_area_ratio(self):
        assert phonons_from_area_ratio(444.0, 2.0, 0.833) == pytest.approx(444.0 * 0.833 / 2.0)
        with pytest.raises(ValueError):
            phonons_from_area_ratio(444.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            combine_area_ratio(444.0, 1.0, AreaInputs(0.0, 0.0, 1.0, 0.0))
