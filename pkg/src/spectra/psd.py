"""
Power spectral densities of the membrane position and of the homodyne output.

All spectra are two-sided in angular frequency: S(w) with
<a(w) a(w')> = S(w) 2*pi*delta(w + w'). On the real axis the response
satisfies R(-w) = R(w)^*, so the mirrored factor is a complex conjugate.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np
from loguru import logger

from src.errors import UndefinedHomodynePhase
from src.model.core import NoiseModel, SteadyState, delay_split
from src.model.params import SystemParams
from src.spectra.transfer import response_stack

IMAG_RESIDUE_WARN = 1e-10


class Normalization(str, Enum):
    SNL_HALF = "snl-half"
    ABSOLUTE = "absolute"


class Quantity(str, Enum):
    S_QQ = "S_QQ"
    S_YDET = "S_Ydet"
    S_YDET_MOTION = "S_Ydet_motion"


class GridKind(str, Enum):
    LINEAR_WINDOW = "linear-window"
    LOG_AUGMENTED = "log-augmented"


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing angular-frequency points in rad/s."""

    points: np.ndarray
    kind: GridKind = GridKind.LINEAR_WINDOW
    center: float = 0.0
    halfwidth: float = 0.0

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise ValueError("A frequency grid needs at least two points")
        if not np.all(np.diff(points) > 0):
            raise ValueError("Frequency grid must be strictly increasing")
        object.__setattr__(self, "points", points)


@dataclass(frozen=True)
class Spectrum:
    grid: FrequencyGrid
    values: np.ndarray
    normalization: Normalization = Normalization.SNL_HALF
    quantity: Quantity = Quantity.S_YDET
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.points.shape:
            raise ValueError("Spectrum values must match the grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("Spectrum values must be finite")
        if np.any(values < 0):
            raise ValueError("Spectrum values must be non-negative")
        object.__setattr__(self, "values", values)


def linear_window_grid(center: float, halfwidth: float, n_points: int) -> FrequencyGrid:
    """Uniform grid on [center - halfwidth, center + halfwidth]."""
    points = np.linspace(center - halfwidth, center + halfwidth, n_points)
    return FrequencyGrid(points, GridKind.LINEAR_WINDOW, center, halfwidth)


def log_augmented_grid(
    center: float, halfwidth: float, n_points: int, span: float, n_log: int = 40
) -> FrequencyGrid:
    """Linear window plus log-spaced points out to center +/- span on each side."""
    core = np.linspace(center - halfwidth, center + halfwidth, n_points)
    offsets = np.geomspace(halfwidth, span, n_log + 1)[1:]
    points = np.unique(np.concatenate([center - offsets, core, center + offsets]))
    return FrequencyGrid(points, GridKind.LOG_AUGMENTED, center, halfwidth)


def _quadratic_form(rows: np.ndarray, m_xi: np.ndarray) -> np.ndarray:
    # rows(w)^T M rows(-w) with rows(-w) = conj(rows(w))
    values = np.einsum("ni,ij,nj->n", rows, m_xi, np.conj(rows))
    scale = np.maximum(np.abs(values), 1e-300)
    residue = np.max(np.abs(values.imag) / scale)
    if residue > IMAG_RESIDUE_WARN:
        logger.warning(f"PSD imaginary residue {residue:.2e} above {IMAG_RESIDUE_WARN:.0e}")
    return values.real


def s_qq(
    ss: SteadyState, params: SystemParams, noise: NoiseModel, omega: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """
    Position PSD S_QQ(w) = chi(w)chi(-w) T(w)^T M_xi T(-w).

    Args:
        ss: Solved steady state
        params: System parameters
        noise: Input-noise correlations
        omega: Real angular frequency or array of them, rad/s

    Returns:
        Real PSD values with the shape of ``omega``
    """
    omegas = np.atleast_1d(np.asarray(omega, dtype=float))
    rows = response_stack(ss, params, omegas)[:, 0, :]
    values = _quadratic_form(rows, noise.m_xi)
    return float(values[0]) if np.ndim(omega) == 0 else values


def homodyne_phase(ss: SteadyState, params: SystemParams) -> float:
    """
    Phase of the mean output field in the intracavity-field frame.

    h_out = (kappa_in - kappa/2 + i Delta_h^eff) <h> / sqrt(kappa_in).

    Raises:
        UndefinedHomodynePhase: when the mean output field vanishes
    """
    factor = complex(params.kappa_in - 0.5 * params.kappa, ss.delta_h_eff)
    magnitude = abs(factor) * abs(ss.mean_h)
    if params.kappa_in == 0 or magnitude == 0.0:
        logger.error("Mean output field vanishes; homodyne phase undefined")
        raise UndefinedHomodynePhase("Mean output field is zero")
    return math.atan2(factor.imag, factor.real)


def output_rows(ss: SteadyState, params: SystemParams, omegas: np.ndarray) -> np.ndarray:
    """Coefficients of the detected phase quadrature on the input vector, shape (N, 9)."""
    psi = homodyne_phase(ss, params)
    response = response_stack(ss, params, omegas)
    root_kin = math.sqrt(params.kappa_in)
    x_out = root_kin * response[:, 2, :]
    y_out = root_kin * response[:, 3, :]
    x_out[:, 1] -= 1.0
    y_out[:, 2] -= 1.0
    return math.cos(psi) * y_out - math.sin(psi) * x_out


def detected_psd(
    ss: SteadyState, params: SystemParams, noise: NoiseModel, omega: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """
    Detected homodyne PSD normalized so the shot-noise level is 0.5.

    S_det = eta_det * S_out + (1 - eta_det) / 2.

    Args:
        ss: Solved steady state
        params: System parameters
        noise: Input-noise correlations
        omega: Real angular frequency or array of them, rad/s

    Returns:
        Detected PSD with the shape of ``omega``
    """
    omegas = np.atleast_1d(np.asarray(omega, dtype=float))
    if params.eta_det == 0:
        values = np.full(omegas.shape, 0.5)
    else:
        s_out = _quadratic_form(output_rows(ss, params, omegas), noise.m_xi)
        values = params.eta_det * s_out + 0.5 * (1.0 - params.eta_det)
    return float(values[0]) if np.ndim(omega) == 0 else values


def qq_spectrum(
    ss: SteadyState, params: SystemParams, noise: NoiseModel, grid: FrequencyGrid
) -> Spectrum:
    values = np.clip(s_qq(ss, params, noise, grid.points), 0.0, None)
    return Spectrum(grid, values, Normalization.ABSOLUTE, Quantity.S_QQ)


def detected_spectrum(
    ss: SteadyState, params: SystemParams, noise: NoiseModel, grid: FrequencyGrid
) -> Spectrum:
    values = np.clip(detected_psd(ss, params, noise, grid.points), 0.0, None)
    return Spectrum(grid, values, Normalization.SNL_HALF, Quantity.S_YDET)


def transduction_stack(ss: SteadyState, params: SystemParams, omegas: np.ndarray) -> np.ndarray:
    """
    Response G(w) of the detected phase quadrature to membrane position, shape (N,).

    Only the probe mode couples Q to the detector and the loop never drives it,
    so G follows from the probe block of the drift matrix and is independent of
    the feedback settings.
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    psi = homodyne_phase(ss, params)
    a_now, _ = delay_split(ss, params)
    block = a_now[None, 2:4, 2:4] + 1j * omegas[:, None, None] * np.eye(2)[None, :, :]
    drive = np.broadcast_to(a_now[2:4, 0], (omegas.size, 2))
    fields = -np.linalg.solve(block, drive[..., None])[..., 0]
    quadrature = math.cos(psi) * fields[:, 1] - math.sin(psi) * fields[:, 0]
    return math.sqrt(params.kappa_in) * quadrature


def motional_psd(
    ss: SteadyState, params: SystemParams, noise: NoiseModel, omega: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """
    Part of the detected PSD carried by the membrane motion, eta_det |G(w)|^2 S_QQ(w).

    The detector tap sits inside the loop, so the full detected PSD also holds
    the loop-noise correlations that squash the in-loop peak. This part does not
    and its peak area scales with the occupation.
    """
    omegas = np.atleast_1d(np.asarray(omega, dtype=float))
    gain = np.abs(transduction_stack(ss, params, omegas)) ** 2
    values = params.eta_det * gain * np.atleast_1d(s_qq(ss, params, noise, omegas))
    return float(values[0]) if np.ndim(omega) == 0 else values


def motional_spectrum(
    ss: SteadyState, params: SystemParams, noise: NoiseModel, grid: FrequencyGrid
) -> Spectrum:
    values = np.clip(motional_psd(ss, params, noise, grid.points), 0.0, None)
    return Spectrum(grid, values, Normalization.SNL_HALF, Quantity.S_YDET_MOTION)
