"""
Frequency-domain solution X(w) = -(A(w) + iwI)^{-1} B(w) xi(w).

Everything here is vectorized over arrays of frequencies through batched
dense solves, so spectra and quadrature evaluate many points per call.
"""

import math
from dataclasses import dataclass

import numpy as np
from loguru import logger

from src.errors import SingularAt
from src.model.core import SteadyState, drift_stack, input_coupling_stack
from src.model.params import SystemParams

# Condition number beyond which the per-frequency system counts as singular
CONDITION_LIMIT = 1e15

POLE_MAX_ITER = 200
POLE_TOL = 1e-13


@dataclass(frozen=True)
class TransferRow:
    """Q(w) = chi_cf(w) * t_vector . xi(w)."""

    omega: float
    chi_cf: complex
    t_vector: np.ndarray


def system_matrix_stack(ss: SteadyState, params: SystemParams, omegas: np.ndarray) -> np.ndarray:
    """A(w) + iwI for each frequency, shape (N, 6, 6)."""
    omegas = np.atleast_1d(np.asarray(omegas))
    return drift_stack(ss, params, omegas) + 1j * omegas[:, None, None] * np.eye(6)[None, :, :]


def response_stack(ss: SteadyState, params: SystemParams, omegas: np.ndarray) -> np.ndarray:
    """
    Full response R(w) = -(A + iwI)^{-1} B, shape (N, 6, 9).

    Row k maps the input vector to state component k.
    """
    omegas = np.atleast_1d(np.asarray(omegas))
    system = system_matrix_stack(ss, params, omegas)
    coupling = input_coupling_stack(ss, params, omegas)
    try:
        response = -np.linalg.solve(system, coupling)
    except np.linalg.LinAlgError:
        bad = omegas[np.argmax(np.abs(np.linalg.det(system)) == 0)]
        logger.error(f"Singular system matrix at omega={bad}")
        raise SingularAt(float(np.real(bad)), math.inf)
    if not np.all(np.isfinite(response)):
        bad = omegas[np.argmax(~np.all(np.isfinite(response), axis=(1, 2)))]
        raise SingularAt(float(np.real(bad)), math.inf)
    return response


def mechanical_susceptibility_stack(
    ss: SteadyState, params: SystemParams, omegas: np.ndarray
) -> np.ndarray:
    """chi_cf(w): Q response to a unit drive of the momentum equation."""
    response = response_stack(ss, params, omegas)
    return response[:, 0, 0] / math.sqrt(2.0 * params.gamma_m)


def solve_transfer(ss: SteadyState, params: SystemParams, omega: float) -> TransferRow:
    """
    Q-row of the frequency-domain solution at one frequency.

    Args:
        ss: Solved steady state
        params: System parameters
        omega: Angular frequency in rad/s

    Returns:
        TransferRow with chi_cf and the 9 input coefficients t_vector

    Raises:
        SingularAt: when A(w) + iwI is numerically singular (a pole on the real axis)
    """
    system = system_matrix_stack(ss, params, np.array([omega]))[0]
    condition = np.linalg.cond(system)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        logger.error(f"System matrix ill-conditioned at omega={omega}: cond={condition:.3e}")
        raise SingularAt(omega, condition)
    row = response_stack(ss, params, np.array([omega]))[0, 0, :]
    chi_cf = row[0] / math.sqrt(2.0 * params.gamma_m)
    return TransferRow(omega=omega, chi_cf=complex(chi_cf), t_vector=row / chi_cf)


def inverse_susceptibility_normalized(ss: SteadyState, params: SystemParams, omega):
    """
    Closed-form inverse susceptibility in units where Omega_m = 1.

    All rates are divided by Omega_m and the delay enters as e^{i w (Omega_m tau)}.
    The expression equals i * c_h * c_v / chi with c = 4 Delta^2 + (kappa - 2iw)^2.
    """
    scale = params.omega_m
    w = np.asarray(omega) / scale
    gamma = params.gamma_m / scale
    kappa = params.kappa / scale
    kappa_in = params.kappa_in / scale
    d_h = ss.delta_h_eff / scale
    d_v = ss.delta_v_eff / scale
    g_h = abs(ss.g_h) / scale
    g_v = abs(ss.g_v) / scale
    root_eta = math.sqrt(params.eta_loop)
    delay = np.exp(1j * w * scale * params.tau)
    lorentz = (kappa - 2j * w) ** 2
    c_h = 4 * d_h**2 + lorentz
    c_v = 4 * d_v**2 + lorentz
    return (
        1j * (16 * d_v * c_h * g_v**2 + c_v * (16 * g_h**2 * d_h - c_h * (w**2 + 1j * gamma * w - 1)))
        - 32 * delay * g_h * g_v * (d_h + d_v) * root_eta * kappa_in * (1j * kappa + 2 * w)
        * math.cos(ss.gamma_angle)
        + 16 * delay * g_h * g_v * kappa_in * (1j * lorentz - 4j * d_h * d_v)
        * math.sin(ss.gamma_angle) * root_eta
    )


def chi_cf_closed_form(ss: SteadyState, params: SystemParams, omega):
    """Dimensional chi_cf from the normalized closed form, in s (per rad/s)."""
    w = np.asarray(omega) / params.omega_m
    lorentz = (params.kappa / params.omega_m - 2j * w) ** 2
    c_h = 4 * (ss.delta_h_eff / params.omega_m) ** 2 + lorentz
    c_v = 4 * (ss.delta_v_eff / params.omega_m) ** 2 + lorentz
    return 1j * c_h * c_v / (params.omega_m * inverse_susceptibility_normalized(ss, params, omega))


def find_poles(ss: SteadyState, params: SystemParams) -> np.ndarray:
    """
    Roots of det(A(w) + iwI) continued from the delay-frozen eigenvalues.

    Each root satisfies w = i*lambda(A(w)); the fixed point is iterated from the
    eigenvalues of A(Omega_m).

    Returns:
        Six complex poles in rad/s, sorted by decreasing imaginary part
    """
    start = np.linalg.eigvals(drift_stack(ss, params, np.array([params.omega_m]))[0])
    poles = []
    for guess in 1j * start:
        omega = guess
        for _ in range(POLE_MAX_ITER):
            candidates = 1j * np.linalg.eigvals(drift_stack(ss, params, np.array([omega]))[0])
            updated = candidates[np.argmin(np.abs(candidates - omega))]
            step = abs(updated - omega)
            omega = updated
            if step <= POLE_TOL * max(abs(omega), params.omega_m):
                break
        else:
            logger.debug(f"Pole continuation stopped at {omega} without converging")
        poles.append(omega)
    poles = np.array(poles)
    return poles[np.argsort(-poles.imag)]


def mechanical_pole(ss: SteadyState, params: SystemParams) -> complex:
    """The positive-frequency pole closest to the real axis."""
    poles = find_poles(ss, params)
    positive = poles[poles.real > 0]
    pool = positive if positive.size else poles
    return complex(pool[np.argmin(np.abs(pool.imag))])
