"""
Run configurations and the experimental default parameter set.

A run configuration is a JSON document holding the full system parameters plus
optional blocks for each CLI command. Unknown keys are rejected everywhere.
"""

import json
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.fit.stages import FitStage, StageName
from src.model.params import (
    C_LIGHT,
    TWO_PI,
    Angle,
    AngularFrequency,
    SystemParams,
    frequency_noise_to_model,
)
from src.spectra.quadrature import IntegrationPolicy
from src.stability.checks import Method
from src.stability.contour import SearchRegion
from src.sweep.axes import Axis, AxisName

SCHEMA_VERSION = "1"

# Cavity finesse; used only for a length cross-check
CAVITY_FINESSE = 27_000

# Effective white frequency noise of the single-term detuning-noise model, Hz^2/Hz.
# The 0.2 Hz^2/Hz level fitted alongside separate laser phase and amplitude noise
# overstates the single-term model. n_bar is linear in this level; 0.13 gives about
# 180 phonons at the CFC point, 170 at Delta_h = -0.21 kappa and 8 for the upgrade.
EFFECTIVE_FREQUENCY_NOISE = 0.13


class AxisSpec(BaseModel):
    """Axis given either as explicit values or as start/stop/num."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: AxisName = Field(description="Swept parameter")
    values: Optional[List[Angle]] = Field(None, description="Explicit axis values")
    start: Optional[Angle] = Field(None, description="First value")
    stop: Optional[Angle] = Field(None, description="Last value")
    num: Optional[int] = Field(None, ge=2, description="Number of values")

    @model_validator(mode="after")
    def _one_form(self) -> "AxisSpec":
        ranged = None not in (self.start, self.stop, self.num)
        if (self.values is None) == (not ranged):
            raise ValueError("Give either values or start/stop/num for an axis")
        return self

    def to_axis(self) -> Axis:
        if self.values is not None:
            return Axis(name=self.name, values=list(self.values))
        return Axis.linspace(self.name, self.start, self.stop, self.num)


class SimulateBlock(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    feedback_blocked: bool = Field(False, description="Set eta_loop = 0 before simulating")
    halfwidth: AngularFrequency = Field(TWO_PI * 20e3, gt=0.0, description="Spectrum half-span around Omega_m, rad/s")
    n_points: int = Field(801, ge=2, description="Spectrum points")


class SweepBlock(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    axis1: AxisSpec
    axis2: AxisSpec


class StabilityBlock(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: Method = Field(Method.ARGUMENT_PRINCIPLE, description="Stability method")
    rho: float = Field(1.0, gt=0.0, le=1.0, description="Loop-gain bound of the sufficient method")
    region: Optional[SearchRegion] = Field(None, description="Search rectangle, rad/s")
    axis1: Optional[AxisSpec] = Field(None, description="Row axis for a stability map")
    axis2: Optional[AxisSpec] = Field(None, description="Column axis for a stability map")

    @model_validator(mode="after")
    def _paired_axes(self) -> "StabilityBlock":
        if (self.axis1 is None) != (self.axis2 is None):
            raise ValueError("A stability map needs both axis1 and axis2")
        return self


class FitBlock(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    data: Dict[StageName, str] = Field(description="Spectrum CSV path per stage")
    stages: Optional[List[FitStage]] = Field(None, description="Stage definitions; default chain when omitted")


class RunConfig(BaseModel):
    """Everything a CLI run needs, in one versioned document."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal["1"] = Field(SCHEMA_VERSION, description="Configuration schema version")
    params: SystemParams = Field(description="System parameters, SI units")
    integration: IntegrationPolicy = Field(default_factory=IntegrationPolicy)
    simulate: SimulateBlock = Field(default_factory=SimulateBlock)
    sweep: Optional[SweepBlock] = None
    stability: StabilityBlock = Field(default_factory=StabilityBlock)
    fit: Optional[FitBlock] = None


def load_defaults() -> SystemParams:
    """
    Experimental parameter set of the cavity-membrane-feedback setup.

    kappa_in follows from the escape efficiency 0.68. eta_f = 0.9 and
    eta_i = eta / eta_f split the loop efficiency and are not measured
    individually. Both modes carry the calibrated effective detuning noise
    EFFECTIVE_FREQUENCY_NOISE.

    Returns:
        SystemParams
    """
    omega_m = TWO_PI * 1.14e6
    kappa = TWO_PI * 3.7e6
    eta_loop = 0.30
    eta_f = 0.9
    params = SystemParams(
        omega_m=omega_m,
        q_factor=1.1e8,
        kappa=kappa,
        kappa_in=0.68 * kappa,
        delta_h=-0.06 * kappa,
        delta_v=-1.11 * kappa,
        g0_h=TWO_PI * 3.7,
        g0_v=TWO_PI * 3.7,
        p_h_in=50e-6,
        p_v_aux=270e-6,
        wavelength=1549.9e-9,
        eta_mm_h=0.96,
        eta_mm_v=0.88,
        eta_hom=0.90,
        eta_loop=eta_loop,
        eta_f=eta_f,
        eta_i=eta_loop / eta_f,
        eta_det=0.014,
        tau=0.24 * math.pi / omega_m,
        gamma=-0.85 * math.pi,
        bath_temperature=300.0,
        s_dd_h=frequency_noise_to_model(EFFECTIVE_FREQUENCY_NOISE),
        s_dd_v=frequency_noise_to_model(EFFECTIVE_FREQUENCY_NOISE),
    )
    free_spectral_range = CAVITY_FINESSE * kappa / TWO_PI
    length = C_LIGHT / (2.0 * free_spectral_range)
    logger.debug(
        f"Finesse {CAVITY_FINESSE} with kappa=2pi*{kappa / TWO_PI:.4g} Hz implies "
        f"FSR={free_spectral_range:.4g} Hz and cavity length {length * 1e3:.3f} mm"
    )
    return params


def default_config() -> RunConfig:
    return RunConfig(params=load_defaults())


def load_config(path: Path) -> RunConfig:
    """
    Load and validate a run configuration.

    Args:
        path: JSON file

    Returns:
        RunConfig

    Raises:
        pydantic.ValidationError: on unknown keys or invariant violations
        OSError: if the file cannot be read
    """
    with open(path, "r") as f:
        data = json.load(f)
    config = RunConfig.model_validate(data)
    logger.debug(f"Loaded config {path} (schema {config.schema_version})")
    return config


def save_config(config: RunConfig, path: Path) -> None:
    """Write a configuration as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(config.model_dump(mode="json"), f, indent=4)
