"""
Steady state and linearized frequency-domain matrices of the CFC + DBC model.

State vector ordering is (Q, P, X_h, Y_h, X_v, Y_v). Input ordering is
(P_in, X_h^in, Y_h^in, X_h^loss, Y_h^loss, X_v^loss, Y_v^loss, dD_h, dD_v).
Fourier convention: Q(w) = int Q(t) e^{iwt} dt, so a delay tau multiplies by e^{iw tau}.
"""

import cmath
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from loguru import logger

from src.errors import NonConvergence
from src.feedback_geometry import compose_gamma, displacement_amplitude, resolved_setup, wrap_angle
from src.model.params import HBAR, K_B, SystemParams

STATE_LABELS = ("Q", "P", "X_h", "Y_h", "X_v", "Y_v")
INPUT_LABELS = (
    "P_in",
    "X_h_in",
    "Y_h_in",
    "X_h_loss",
    "Y_h_loss",
    "X_v_loss",
    "Y_v_loss",
    "dD_h",
    "dD_v",
)

STEADY_STATE_DAMPING = 0.5
STEADY_STATE_MAX_ITER = 10_000
STEADY_STATE_TOL = 1e-12

FrequencyLike = Union[float, complex, np.ndarray]

_VACUUM_BLOCK = np.array([[0.5, 0.5j], [-0.5j, 0.5]])


@dataclass(frozen=True)
class SteadyState:
    """Self-consistent mean fields, effective detunings and coupling phases."""

    mean_h: complex
    mean_v: complex
    mean_q: float
    mean_p: float
    delta_h_eff: float
    delta_v_eff: float
    g_h: complex
    g_v: complex
    u: float
    x: float
    gamma_angle: float
    mean_h_in: complex
    delta: complex
    iterations: int = 0


@dataclass(frozen=True)
class DriftMatrix:
    """Drift matrix A(omega) for the state ordering in STATE_LABELS."""

    entries: np.ndarray
    omega: complex


@dataclass(frozen=True)
class NoiseModel:
    """Input-noise correlation matrix M_xi for the ordering in INPUT_LABELS."""

    m_xi: np.ndarray
    n_bar_in: float


def thermal_occupation(temperature: float, omega_m: float) -> float:
    """
    Mean thermal occupation of the mechanical bath.

    Uses the exact Bose factor 1/(exp(hbar*w/kT) - 1), which reduces to
    kT/(hbar*w) - 1/2 at room temperature.

    Args:
        temperature: Bath temperature in K
        omega_m: Mechanical angular frequency in rad/s

    Returns:
        Bose occupation n_bar_in
    """
    if not (math.isfinite(temperature) and math.isfinite(omega_m)):
        logger.error(f"Non-finite thermal inputs T={temperature}, omega_m={omega_m}")
        raise ValueError("temperature and omega_m must be finite")
    if temperature < 0 or omega_m <= 0:
        raise ValueError("temperature must be >= 0 and omega_m > 0")
    if temperature == 0:
        return 0.0
    ratio = HBAR * omega_m / (K_B * temperature)
    return float(1.0 / np.expm1(ratio))


def effective_temperature(n_bar: float, omega_m: float) -> float:
    """Temperature whose Bose occupation at omega_m equals n_bar."""
    if n_bar <= 0:
        return 0.0
    return HBAR * omega_m / (K_B * math.log1p(1.0 / n_bar))


def cooling_factor(n_bar_in: float, n_bar: float) -> float:
    """Ratio of bath occupation to final occupation."""
    if n_bar <= 0:
        raise ValueError(f"n_bar must be positive, got {n_bar}")
    return n_bar_in / n_bar


def _cavity_fields(
    params: SystemParams, h_in: complex, delta: complex, delta_h_eff: float, delta_v_eff: float
) -> Tuple[complex, complex]:
    half_kappa = 0.5 * params.kappa
    root_kin = math.sqrt(params.kappa_in)
    h_response = 1.0 / (half_kappa - 1j * delta_h_eff)
    mean_h = root_kin * h_in * h_response
    # Carrier re-injected through the loop plus the displacement
    carrier = delta + math.sqrt(params.eta_loop) * cmath.exp(-1j * params.phi) * (
        1.0 - params.kappa_in * h_response
    ) * h_in
    mean_v = root_kin * carrier / (half_kappa - 1j * delta_v_eff)
    return mean_h, mean_v


def _radiation_pressure_q(params: SystemParams, mean_h: complex, mean_v: complex) -> float:
    return (
        math.sqrt(2.0)
        / params.omega_m
        * (params.g0_h * abs(mean_h) ** 2 + params.g0_v * abs(mean_v) ** 2)
    )


def _effective_detunings(params: SystemParams, mean_q: float) -> Tuple[float, float]:
    shift = math.sqrt(2.0) * mean_q
    return params.delta_h - shift * params.g0_h, params.delta_v - shift * params.g0_v


def solve_steady_state(params: SystemParams) -> SteadyState:
    """
    Solve the self-consistent steady state by damped fixed-point iteration on <Q>.

    Args:
        params: System parameters

    Returns:
        SteadyState with <P> = 0 and mean detuning fluctuations taken as zero

    Raises:
        NonConvergence: if the iteration cap is reached (bistability or pathological inputs)
    """
    phase = cmath.exp(1j * params.probe_phase)
    h_in = params.mean_h_in * phase
    delta = displacement_amplitude(resolved_setup(params), params.eta_f).delta * phase

    mean_q = 0.0
    converged = False
    iteration = 0
    for iteration in range(1, STEADY_STATE_MAX_ITER + 1):
        delta_h_eff, delta_v_eff = _effective_detunings(params, mean_q)
        mean_h, mean_v = _cavity_fields(params, h_in, delta, delta_h_eff, delta_v_eff)
        target = _radiation_pressure_q(params, mean_h, mean_v)
        updated = (1.0 - STEADY_STATE_DAMPING) * mean_q + STEADY_STATE_DAMPING * target
        change = abs(updated - mean_q)
        mean_q = updated
        if change == 0.0 or change <= STEADY_STATE_TOL * abs(mean_q):
            converged = True
            break
    if not converged:
        logger.error(f"Steady state did not converge in {STEADY_STATE_MAX_ITER} iterations")
        raise NonConvergence(
            f"Fixed-point iteration exceeded {STEADY_STATE_MAX_ITER} iterations; "
            "the parameters may be optically bistable"
        )
    # Final evaluation at the converged <Q>
    delta_h_eff, delta_v_eff = _effective_detunings(params, mean_q)
    mean_h, mean_v = _cavity_fields(params, h_in, delta, delta_h_eff, delta_v_eff)
    mean_q = _radiation_pressure_q(params, mean_h, mean_v)
    delta_h_eff, delta_v_eff = _effective_detunings(params, mean_q)

    u = cmath.phase(mean_h) if mean_h != 0 else 0.0
    x = cmath.phase(mean_v) if mean_v != 0 else 0.0
    if params.gamma is not None:
        gamma_angle = wrap_angle(params.gamma)
    else:
        gamma_angle = compose_gamma(params.phi, u, x)

    logger.debug(
        f"Steady state after {iteration} iterations: <Q>={mean_q:.6e}, "
        f"|h|={abs(mean_h):.6e}, |v|={abs(mean_v):.6e}, gamma={gamma_angle:.6f}"
    )
    return SteadyState(
        mean_h=mean_h,
        mean_v=mean_v,
        mean_q=mean_q,
        mean_p=0.0,
        delta_h_eff=delta_h_eff,
        delta_v_eff=delta_v_eff,
        g_h=params.g0_h * mean_h,
        g_v=params.g0_v * mean_v,
        u=u,
        x=x,
        gamma_angle=gamma_angle,
        mean_h_in=h_in,
        delta=delta,
        iterations=iteration,
    )


def steady_state_residuals(ss: SteadyState, params: SystemParams) -> dict:
    """
    Relative residuals of the steady-state equations at stored values.

    Returns:
        Mapping of equation name to relative residual
    """
    half_kappa = 0.5 * params.kappa
    root_kin = math.sqrt(params.kappa_in)
    scale_h = max(abs(root_kin * ss.mean_h_in), 1e-300)
    h_eq = (half_kappa - 1j * ss.delta_h_eff) * ss.mean_h - root_kin * ss.mean_h_in
    carrier = ss.delta + math.sqrt(params.eta_loop) * cmath.exp(-1j * params.phi) * (
        ss.mean_h_in - root_kin * ss.mean_h
    )
    scale_v = max(abs(root_kin * carrier), 1e-300)
    v_eq = (half_kappa - 1j * ss.delta_v_eff) * ss.mean_v - root_kin * carrier
    q_target = _radiation_pressure_q(params, ss.mean_h, ss.mean_v)
    dh, dv = _effective_detunings(params, ss.mean_q)
    return {
        "cavity_h": abs(h_eq) / scale_h,
        "cavity_v": abs(v_eq) / scale_v,
        "position": abs(ss.mean_q - q_target) / max(abs(q_target), 1e-300),
        "detuning_h": abs(ss.delta_h_eff - dh) / max(abs(dh), params.kappa),
        "detuning_v": abs(ss.delta_v_eff - dv) / max(abs(dv), params.kappa),
    }


def delay_split(ss: SteadyState, params: SystemParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split the drift matrix as A(w) = A_now + e^{i w tau} A_delayed.

    Both parts are real; A_delayed only has entries in the (X_v, Y_v) rows.
    """
    g_h = abs(ss.g_h)
    g_v = abs(ss.g_v)
    half_kappa = 0.5 * params.kappa
    a_now = np.zeros((6, 6))
    a_now[0, 1] = params.omega_m
    a_now[1, 0] = -params.omega_m
    a_now[1, 1] = -params.gamma_m
    a_now[1, 2] = -2.0 * g_h
    a_now[1, 4] = -2.0 * g_v
    a_now[2, 2] = -half_kappa
    a_now[2, 3] = -ss.delta_h_eff
    a_now[3, 0] = -2.0 * g_h
    a_now[3, 2] = ss.delta_h_eff
    a_now[3, 3] = -half_kappa
    a_now[4, 4] = -half_kappa
    a_now[4, 5] = -ss.delta_v_eff
    a_now[5, 0] = -2.0 * g_v
    a_now[5, 4] = ss.delta_v_eff
    a_now[5, 5] = -half_kappa

    gain = math.sqrt(params.eta_loop) * params.kappa_in
    cos_g = math.cos(ss.gamma_angle)
    sin_g = math.sin(ss.gamma_angle)
    a_delayed = np.zeros((6, 6))
    a_delayed[4, 2] = -gain * cos_g
    a_delayed[4, 3] = -gain * sin_g
    a_delayed[5, 2] = gain * sin_g
    a_delayed[5, 3] = -gain * cos_g
    return a_now, a_delayed


def delay_factor(params: SystemParams, omega: FrequencyLike) -> FrequencyLike:
    """Delay-line factor e^{i w tau}; exactly 1 at w = 0."""
    return np.exp(1j * np.asarray(omega) * params.tau)


def drift_stack(ss: SteadyState, params: SystemParams, omegas: np.ndarray) -> np.ndarray:
    """Drift matrices for an array of (possibly complex) frequencies, shape (N, 6, 6)."""
    a_now, a_delayed = delay_split(ss, params)
    factors = delay_factor(params, np.atleast_1d(omegas))
    return a_now[None, :, :] + factors[:, None, None] * a_delayed[None, :, :]


def drift_matrix(ss: SteadyState, params: SystemParams, omega: complex) -> DriftMatrix:
    """
    Drift matrix A(omega) of the linearized Langevin equations.

    Args:
        ss: Solved steady state
        params: System parameters
        omega: Angular frequency in rad/s (complex values allowed for contour work)

    Returns:
        DriftMatrix
    """
    if not cmath.isfinite(omega):
        raise ValueError(f"omega must be finite, got {omega}")
    return DriftMatrix(entries=drift_stack(ss, params, np.array([omega]))[0], omega=omega)


def input_coupling_stack(
    ss: SteadyState, params: SystemParams, omegas: np.ndarray
) -> np.ndarray:
    """
    Input-coupling matrices B(omega) with b(omega) = B(omega) xi(omega), shape (N, 6, 9).
    """
    omegas = np.atleast_1d(omegas)
    factors = delay_factor(params, omegas)
    cos_g = math.cos(ss.gamma_angle)
    sin_g = math.sin(ss.gamma_angle)
    root_kin = math.sqrt(params.kappa_in)
    root_loss_h = math.sqrt(params.loss_rate_h)
    root_loss_v = math.sqrt(params.loss_rate_v)
    root_fb = math.sqrt(params.eta_loop * params.kappa_in)

    coupling = np.zeros((omegas.size, 6, 9), dtype=complex)
    coupling[:, 1, 0] = math.sqrt(2.0 * params.gamma_m)
    coupling[:, 2, 1] = root_kin
    coupling[:, 2, 3] = root_loss_h
    coupling[:, 3, 2] = root_kin
    coupling[:, 3, 4] = root_loss_h
    coupling[:, 3, 7] = -math.sqrt(2.0) * abs(ss.mean_h)
    coupling[:, 4, 5] = root_loss_v
    coupling[:, 4, 1] = root_fb * factors * cos_g
    coupling[:, 4, 2] = root_fb * factors * sin_g
    coupling[:, 5, 6] = root_loss_v
    coupling[:, 5, 1] = -root_fb * factors * sin_g
    coupling[:, 5, 2] = root_fb * factors * cos_g
    coupling[:, 5, 8] = -math.sqrt(2.0) * abs(ss.mean_v)
    return coupling


def noise_model(params: SystemParams, n_bar_in: float) -> NoiseModel:
    """
    Correlation matrix M_xi of the input vector.

    The 2*pi*delta(w + w') factor is implicit; spectra integrate it analytically.

    Args:
        params: System parameters (detuning-noise levels)
        n_bar_in: Thermal bath occupation

    Returns:
        NoiseModel
    """
    if n_bar_in < 0 or not math.isfinite(n_bar_in):
        raise ValueError(f"n_bar_in must be finite and >= 0, got {n_bar_in}")
    m_xi = np.zeros((9, 9), dtype=complex)
    m_xi[0, 0] = n_bar_in + 0.5
    for start in (1, 3, 5):
        m_xi[start : start + 2, start : start + 2] = _VACUUM_BLOCK
    m_xi[7, 7] = params.s_dd_h
    m_xi[8, 8] = params.s_dd_v
    return NoiseModel(m_xi=m_xi, n_bar_in=n_bar_in)


def thermal_noise_model(params: SystemParams) -> NoiseModel:
    """Noise model with the bath occupation taken from params."""
    return noise_model(params, thermal_occupation(params.bath_temperature, params.omega_m))
