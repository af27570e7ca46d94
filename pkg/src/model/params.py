"""
Parameter types for the cavity-membrane-feedback system.

All physical quantities are SI with angular frequencies in rad/s. Angles and
rates may also be given as strings such as ``"-0.85pi"``, ``"-153deg"`` or
``"2pi*1.14e6"`` when a model is validated from a config file.
"""

import math
import re
from typing import Annotated, Any, Literal, Optional

from loguru import logger
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator
from scipy import constants

HBAR = constants.hbar
K_B = constants.k
C_LIGHT = constants.c
TWO_PI = 2.0 * math.pi

_UNSIGNED = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_NUMBER = rf"[+-]?{_UNSIGNED}"
_PI_ANGLE = re.compile(rf"^\s*([+-])?\s*({_UNSIGNED})?\s*\*?\s*pi\s*(?:/\s*({_UNSIGNED}))?\s*$")
_DEG_ANGLE = re.compile(rf"^\s*({_NUMBER})\s*deg\s*$")
_TWO_PI_RATE = re.compile(rf"^\s*2\s*\*?\s*pi\s*\*\s*({_NUMBER})\s*$")


def parse_angle(value: Any) -> Any:
    """
    Normalize an angle given in rad, units of pi or degrees to rad.

    Args:
        value: Number (rad) or string like "-0.85pi", "pi/4", "-153deg"

    Returns:
        The angle in rad, or the input unchanged for pydantic to reject
    """
    if not isinstance(value, str):
        return value
    text = value.strip().lower()
    match = _PI_ANGLE.match(text)
    if match:
        sign = -1.0 if match.group(1) == "-" else 1.0
        factor = float(match.group(2)) if match.group(2) else 1.0
        divisor = float(match.group(3)) if match.group(3) else 1.0
        return sign * factor * math.pi / divisor
    match = _DEG_ANGLE.match(text)
    if match:
        return math.radians(float(match.group(1)))
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"Cannot parse angle {value!r}")


def parse_angular_frequency(value: Any) -> Any:
    """Accept rad/s numbers or ``2pi*<Hz>`` expressions."""
    if not isinstance(value, str):
        return value
    match = _TWO_PI_RATE.match(value.lower())
    if match:
        return TWO_PI * float(match.group(1))
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"Cannot parse angular frequency {value!r}")


Angle = Annotated[float, BeforeValidator(parse_angle)]
AngularFrequency = Annotated[float, BeforeValidator(parse_angular_frequency)]
Efficiency = Annotated[float, Field(ge=0.0, le=1.0)]


def frequency_noise_to_model(s_nu: float) -> float:
    """
    Convert a quoted frequency-noise level to the white detuning PSD of M_xi.

    The quoted level is in Hz^2/Hz. Converting Hz^2 to (rad/s)^2 contributes
    (2pi)^2 and the 2pi*delta(w+w') spectral convention contributes one more 2pi.

    Args:
        s_nu: Frequency-noise PSD in Hz^2/Hz

    Returns:
        S_dd in the units entering the noise correlation matrix
    """
    if s_nu < 0 or not math.isfinite(s_nu):
        raise ValueError(f"Frequency-noise level must be finite and >= 0, got {s_nu}")
    return TWO_PI**3 * s_nu


class DisplacementSetup(BaseModel):
    """Beamsplitter combination of the reflected probe with the auxiliary beam."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    bs_transmissivity: float = Field(
        0.9, gt=0.0, le=1.0, description="Beamsplitter transmissivity T for the signal path"
    )
    lo_amplitude: Optional[float] = Field(
        None,
        ge=0.0,
        description="|beta_LO| in sqrt(photons/s); derived from p_v_aux when omitted",
    )
    theta: Angle = Field(0.0, description="Interference angle theta, rad")
    psi: Angle = Field(0.0, description="Beamsplitter phase offset Psi, rad")


class SystemParams(BaseModel):
    """Physical and technical constants of the cavity-membrane-feedback system."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega_m: AngularFrequency = Field(gt=0.0, description="Mechanical resonance, rad/s")
    gamma_m: AngularFrequency = Field(gt=0.0, description="Mechanical damping, rad/s")
    q_factor: float = Field(gt=0.0, description="Mechanical quality factor omega_m/gamma_m")
    kappa: AngularFrequency = Field(gt=0.0, description="Total cavity linewidth, rad/s")
    kappa_in: AngularFrequency = Field(ge=0.0, description="Input-coupler rate, rad/s")
    delta_h: AngularFrequency = Field(description="Bare probe-mode detuning, rad/s")
    delta_v: AngularFrequency = Field(description="Bare cooling-mode detuning, rad/s")
    g0_h: AngularFrequency = Field(ge=0.0, description="Probe-mode vacuum coupling, rad/s")
    g0_v: AngularFrequency = Field(ge=0.0, description="Cooling-mode vacuum coupling, rad/s")
    p_h_in: float = Field(ge=0.0, description="Probe input power, W")
    p_v_aux: float = Field(ge=0.0, description="Auxiliary (cooling) beam power, W")
    wavelength: float = Field(gt=0.0, description="Laser wavelength, m")
    eta_mm_h: Efficiency = Field(1.0, description="Probe mode-matching efficiency")
    eta_mm_v: Efficiency = Field(1.0, description="Auxiliary mode-matching efficiency")
    eta_hom: Efficiency = Field(
        1.0, description="Homodyne visibility; bounds the total detection efficiency eta_det"
    )
    eta_loop: Efficiency = Field(0.0, description="Feedback-loop efficiency eta")
    eta_f: Efficiency = Field(1.0, description="Post-displacement loss factor")
    eta_i: Efficiency = Field(1.0, description="Cavity-to-beamsplitter loss factor")
    eta_det: Efficiency = Field(1.0, description="Total detection efficiency")
    tau: float = Field(0.0, ge=0.0, description="Feedback delay, s")
    phi: Angle = Field(0.0, description="Feedback loop phase, rad")
    gamma: Optional[Angle] = Field(
        None, description="Displacement angle override, rad; composed from phi, u, x when omitted"
    )
    probe_phase: Angle = Field(0.0, description="Global laser phase applied to all drives, rad")
    bath_temperature: float = Field(ge=0.0, description="Bath temperature, K")
    s_dd_h: float = Field(0.0, ge=0.0, description="Probe detuning-noise PSD, (rad/s)^2/Hz")
    s_dd_v: float = Field(0.0, ge=0.0, description="Cooling detuning-noise PSD, (rad/s)^2/Hz")
    aux_power_reference: Literal["cavity", "beamsplitter"] = Field(
        "cavity",
        description="Whether p_v_aux is the power delivered to the cavity or to the beamsplitter",
    )
    displacement: DisplacementSetup = Field(default_factory=DisplacementSetup)

    @model_validator(mode="before")
    @classmethod
    def _fill_damping(cls, data: Any) -> Any:
        # Either of gamma_m / q_factor may be omitted
        if isinstance(data, dict):
            data = dict(data)
            omega_m = parse_angular_frequency(data.get("omega_m"))
            if omega_m is not None:
                if data.get("gamma_m") is None and data.get("q_factor") is not None:
                    data["gamma_m"] = float(omega_m) / float(data["q_factor"])
                elif data.get("q_factor") is None and data.get("gamma_m") is not None:
                    data["q_factor"] = float(omega_m) / float(
                        parse_angular_frequency(data["gamma_m"])
                    )
        return data

    @model_validator(mode="after")
    def _check_invariants(self) -> "SystemParams":
        if self.kappa_in > self.kappa:
            logger.error(f"kappa_in={self.kappa_in} exceeds kappa={self.kappa}")
            raise ValueError("kappa_in must not exceed kappa")
        if self.eta_det > self.eta_hom:
            logger.error(f"eta_det={self.eta_det} exceeds eta_hom={self.eta_hom}")
            raise ValueError("eta_det must not exceed eta_hom")
        expected = self.omega_m / self.q_factor
        if abs(self.gamma_m - expected) > 1e-12 * expected:
            raise ValueError(
                f"gamma_m={self.gamma_m} inconsistent with omega_m/q_factor={expected}"
            )
        values = self.model_dump(exclude={"displacement", "aux_power_reference", "gamma"})
        for name, value in values.items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
        return self

    @property
    def laser_omega(self) -> float:
        """Laser angular frequency 2*pi*c/lambda."""
        return TWO_PI * C_LIGHT / self.wavelength

    @property
    def photon_energy(self) -> float:
        return HBAR * self.laser_omega

    @property
    def mean_h_in(self) -> float:
        """Probe input amplitude sqrt(eta_mm_h * P / hbar w_L) in sqrt(photons/s)."""
        return math.sqrt(self.eta_mm_h * self.p_h_in / self.photon_energy)

    @property
    def aux_flux(self) -> float:
        """Mode-matched auxiliary photon flux, photons/s."""
        return self.eta_mm_v * self.p_v_aux / self.photon_energy

    @property
    def loss_rate_h(self) -> float:
        return self.kappa - self.kappa_in

    @property
    def loss_rate_v(self) -> float:
        """Combined loss channel kappa - eta*kappa_in of the cooling mode."""
        return self.kappa - self.eta_loop * self.kappa_in

    def with_updates(self, **updates: Any) -> "SystemParams":
        """Return a validated copy with the given fields replaced."""
        data = self.model_dump()
        if "displacement" in updates and isinstance(updates["displacement"], BaseModel):
            updates["displacement"] = updates["displacement"].model_dump()
        # Keep gamma_m = omega_m / q_factor when only one side of the relation changes
        if "gamma_m" in updates and "q_factor" not in updates:
            data.pop("q_factor")
        elif ("omega_m" in updates or "q_factor" in updates) and "gamma_m" not in updates:
            data.pop("gamma_m")
        data.update(updates)
        return SystemParams.model_validate(data)

    def with_displacement(self, **updates: Any) -> "SystemParams":
        """Return a validated copy with displacement fields replaced."""
        setup = self.displacement.model_dump()
        setup.update(updates)
        return self.with_updates(displacement=setup)
