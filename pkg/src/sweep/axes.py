"""
Sweep axes and how each one rewrites a parameter template.

Axis values are in the units shown in the axis name: ``omega_m_tau`` in rad,
``gamma`` and ``theta`` in rad, detunings in units of kappa, ``kappa`` in rad/s,
powers in W and ``eta_loop`` dimensionless.
"""

from enum import Enum
from typing import List, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.model.params import SystemParams


class AxisName(str, Enum):
    OMEGA_M_TAU = "omega_m_tau"
    GAMMA = "gamma"
    THETA = "theta"
    DELTA_H_OVER_KAPPA = "delta_h_over_kappa"
    DELTA_V_OVER_KAPPA = "delta_v_over_kappa"
    KAPPA = "kappa"
    P_H_IN = "p_h_in"
    P_V_AUX = "p_v_aux"
    ETA_LOOP = "eta_loop"


class Axis(BaseModel):
    """A named, strictly monotone list of sweep values."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: AxisName = Field(description="Parameter swept along this axis")
    values: List[float] = Field(description="Strictly monotone axis values in the axis units")

    @field_validator("values")
    @classmethod
    def _monotone(cls, values: List[float]) -> List[float]:
        if len(values) < 2:
            raise ValueError("An axis needs at least two values")
        steps = np.diff(values)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("Axis values must be strictly monotone")
        if not np.all(np.isfinite(values)):
            raise ValueError("Axis values must be finite")
        return list(values)

    @classmethod
    def linspace(cls, name: AxisName, start: float, stop: float, num: int) -> "Axis":
        if num < 2:
            raise ValueError(f"Resolution must be >= 2, got {num}")
        return cls(name=name, values=np.linspace(start, stop, num).tolist())

    def __len__(self) -> int:
        return len(self.values)


def apply_axis(params: SystemParams, name: AxisName, value: float) -> SystemParams:
    """
    Return ``params`` with one axis coordinate applied.

    Sweeping ``theta`` clears any gamma override so the angle follows from the
    displacement geometry. Sweeping ``kappa`` keeps the escape efficiency
    kappa_in/kappa fixed and leaves the absolute detunings untouched.
    """
    name = AxisName(name)
    if name is AxisName.OMEGA_M_TAU:
        return params.with_updates(tau=value / params.omega_m)
    if name is AxisName.GAMMA:
        return params.with_updates(gamma=value)
    if name is AxisName.THETA:
        return params.with_updates(gamma=None).with_displacement(theta=value)
    if name is AxisName.DELTA_H_OVER_KAPPA:
        return params.with_updates(delta_h=value * params.kappa)
    if name is AxisName.DELTA_V_OVER_KAPPA:
        return params.with_updates(delta_v=value * params.kappa)
    if name is AxisName.KAPPA:
        escape = params.kappa_in / params.kappa
        return params.with_updates(kappa=value, kappa_in=escape * value)
    if name is AxisName.P_H_IN:
        return params.with_updates(p_h_in=value)
    if name is AxisName.P_V_AUX:
        return params.with_updates(p_v_aux=value)
    if name is AxisName.ETA_LOOP:
        return params.with_updates(eta_loop=value)
    logger.error(f"Unknown sweep axis {name}")
    raise ValueError(f"Unknown sweep axis {name}")


def apply_coordinates(
    params: SystemParams, names: Sequence[AxisName], values: Sequence[float]
) -> SystemParams:
    """Apply several axis coordinates in order."""
    for name, value in zip(names, values):
        params = apply_axis(params, name, value)
    return params
