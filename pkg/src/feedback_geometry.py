"""
Displacement operation of the feedback loop.

The reflected probe is combined with a strong auxiliary beam on an asymmetric
beamsplitter. The transmitted auxiliary amplitude displaces the carrier of the
re-injected field, which sets the angle x of the cooling-mode steady state and
hence the displacement angle gamma = phi - u + x.
"""

import cmath
import math
from dataclasses import dataclass

from loguru import logger

from src.errors import DegenerateArgument
from src.model.params import DisplacementSetup, SystemParams

# Below this magnitude both parts of the angle formula count as vanishing
_DEGENERATE_FLOOR = 1e-300


@dataclass(frozen=True)
class DisplacementAmplitude:
    """Displacement before (delta0) and after (delta) post-beamsplitter loss."""

    delta0: complex
    delta: complex


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


def resolve_lo_amplitude(params: SystemParams) -> float:
    """
    Auxiliary amplitude |beta_LO| for the configured setup.

    An explicit ``displacement.lo_amplitude`` wins. Otherwise it is derived from
    ``p_v_aux``: with the "cavity" reference the power is what reaches the cavity,
    so |delta|^2 equals the mode-matched auxiliary flux; with the "beamsplitter"
    reference |beta_LO|^2 itself equals that flux.

    Args:
        params: System parameters

    Returns:
        |beta_LO| in sqrt(photons/s)
    """
    setup = params.displacement
    if setup.lo_amplitude is not None:
        return setup.lo_amplitude
    amplitude = math.sqrt(params.aux_flux)
    if params.aux_power_reference == "beamsplitter":
        return amplitude
    transfer = params.eta_f * (1.0 - setup.bs_transmissivity)
    if transfer <= 0.0:
        logger.warning(
            "Displacement path transmits nothing; using the beamsplitter power reference"
        )
        return amplitude
    return amplitude / math.sqrt(transfer)


def resolved_setup(params: SystemParams) -> DisplacementSetup:
    """Displacement setup with |beta_LO| filled in."""
    return params.displacement.model_copy(
        update={"lo_amplitude": resolve_lo_amplitude(params)}
    )


def displacement_amplitude(setup: DisplacementSetup, eta_f: float) -> DisplacementAmplitude:
    """
    Displacement amplitude delta0 = sqrt(1-T)|beta_LO|e^{i(-theta+Psi)}, delta = sqrt(eta_f) delta0.

    Args:
        setup: Displacement setup with ``lo_amplitude`` resolved
        eta_f: Post-displacement loss factor in [0, 1]

    Returns:
        DisplacementAmplitude
    """
    if setup.lo_amplitude is None:
        raise ValueError("lo_amplitude must be resolved before computing the displacement")
    if not 0.0 <= eta_f <= 1.0:
        raise ValueError(f"eta_f must lie in [0, 1], got {eta_f}")
    magnitude = math.sqrt(1.0 - setup.bs_transmissivity) * setup.lo_amplitude
    delta0 = magnitude * cmath.exp(1j * (-setup.theta + setup.psi))
    return DisplacementAmplitude(delta0=delta0, delta=math.sqrt(eta_f) * delta0)


def _angle_x_closed_form(
    theta: float,
    delta_abs: float,
    params: SystemParams,
    delta_h_eff: float,
    delta_v_eff: float,
    mean_h_in: float,
) -> float:
    # phi = Psi = 0 form: x = arctan(num / den)
    half_kappa = 0.5 * params.kappa
    root_eta = math.sqrt(params.eta_loop)
    denom_h = half_kappa**2 + delta_h_eff**2
    cos_group = delta_abs * math.cos(theta) + root_eta * mean_h_in * (
        1.0 - params.kappa_in * half_kappa / denom_h
    )
    sin_group = -delta_abs * math.sin(theta) - root_eta * mean_h_in * (
        params.kappa_in * delta_h_eff / denom_h
    )
    root_kin = math.sqrt(params.kappa_in)
    numerator = root_kin * (half_kappa * sin_group + delta_v_eff * cos_group)
    denominator = root_kin * (half_kappa * cos_group - delta_v_eff * sin_group)
    if abs(numerator) < _DEGENERATE_FLOOR and abs(denominator) < _DEGENERATE_FLOOR:
        logger.error("Cooling-mode drive vanishes; angle x is undefined")
        raise DegenerateArgument("No cooling-mode drive: both |beta_LO| and <h_in> vanish")
    return math.atan2(numerator, denominator)


def angle_x(
    setup: DisplacementSetup,
    params: SystemParams,
    delta_h_eff: float,
    delta_v_eff: float,
    mean_h_in: float,
) -> float:
    """
    Closed-form phase x of the cooling-mode steady state.

    The closed form holds for phi = Psi = 0. Other loop phases, beamsplitter
    offsets and a global laser phase enter through theta' = theta - Psi - phi
    and a final shift of (probe_phase - phi).

    Args:
        setup: Displacement setup with ``lo_amplitude`` resolved
        params: System parameters (kappa, kappa_in, eta_loop, eta_f, phi, probe_phase)
        delta_h_eff: Effective probe detuning, rad/s
        delta_v_eff: Effective cooling detuning, rad/s
        mean_h_in: Probe input amplitude magnitude, sqrt(photons/s)

    Returns:
        x wrapped to (-pi, pi]
    """
    delta = displacement_amplitude(setup, params.eta_f).delta
    theta_eff = setup.theta - setup.psi - params.phi
    x_rotated = _angle_x_closed_form(
        theta_eff, abs(delta), params, delta_h_eff, delta_v_eff, mean_h_in
    )
    return wrap_angle(x_rotated - params.phi + params.probe_phase)


def compose_gamma(phi: float, u: float, x: float) -> float:
    """Displacement angle gamma = phi - u + x, wrapped to (-pi, pi]."""
    return wrap_angle(phi - u + x)
