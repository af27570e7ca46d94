"""
Staged least-squares fits of the detected homodyne spectrum.

The measurement chain has three configurations:

- DBC1: probe beam only (cooling beam and feedback blocked)
- DBC2: probe and cooling beams, feedback blocked
- CFC: feedback closed

Each stage fits a few parameters on the log of the spectrum and freezes them for
the stages after it.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import trapezoid
from scipy.optimize import least_squares

from src.errors import BasinEscape, CFCError, FitDiverged
from src.fit.uncertainty import AreaInputs, PropagatedValue, combine_area_ratio, propagate_uncertainty
from src.model.core import solve_steady_state, thermal_noise_model
from src.model.params import TWO_PI, SystemParams, frequency_noise_to_model
from src.spectra.psd import (
    FrequencyGrid,
    Spectrum,
    detected_psd,
    detected_spectrum,
    linear_window_grid,
    motional_spectrum,
)
from src.spectra.quadrature import IntegrationPolicy, phonon_occupation
from src.spectra.transfer import mechanical_pole

DETUNINGS = ("delta_h", "delta_v")
COUPLINGS = ("g0_h", "g0_v")
NOISE_LEVELS = ("s_dd_h", "s_dd_v")
FITTABLE = DETUNINGS + COUPLINGS + NOISE_LEVELS + ("gamma",)

# max/median - 1 below this counts as no signal
FLAT_CONTRAST = 1e-3
# Floor keeping the log-model finite when nuisances push it down
MODEL_FLOOR = 1e-12
# Residual returned for parameter vectors where the model cannot be evaluated
FAILED_RESIDUAL = 1e3
CONDITION_LIMIT = 1e12
# Half-width of the peak-area window in mechanical half-linewidths
PEAK_WINDOW = 40.0


class StageName(str, Enum):
    DBC1 = "DBC1"
    DBC2 = "DBC2"
    CFC = "CFC"


_DEFAULT_FREE = {
    StageName.DBC1: ["delta_h", "g0_h", "s_dd_h"],
    StageName.DBC2: ["g0_v", "s_dd_v"],
    StageName.CFC: ["gamma"],
}


class FitStage(BaseModel):
    """Free parameters of one stage and the provenance of everything frozen."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    stage: StageName = Field(description="Measurement configuration")
    free: List[str] = Field(description="SystemParams fields fitted in this stage")
    frozen: Dict[str, str] = Field(
        default_factory=dict, description="Field name -> stage that fixed it"
    )
    fit_amplitude: bool = Field(False, description="Fit a signal amplitude nuisance a")
    fit_offset: bool = Field(False, description="Fit an additive offset nuisance b")
    n_averages: int = Field(1, ge=1, description="Periodogram averages per bin")

    @model_validator(mode="after")
    def _check_sets(self) -> "FitStage":
        unknown = set(self.free) - set(FITTABLE)
        if unknown:
            raise ValueError(f"Unknown fit parameters {sorted(unknown)}")
        if not self.free:
            raise ValueError("A stage needs at least one free parameter")
        overlap = set(self.free) & set(self.frozen)
        if overlap:
            raise ValueError(f"Parameters both free and frozen: {sorted(overlap)}")
        if self.stage is StageName.CFC and self.free != ["gamma"]:
            raise ValueError("The CFC stage fits gamma only")
        return self

    @classmethod
    def default(
        cls, stage: StageName, frozen: Optional[Dict[str, str]] = None, fit_delta_v: bool = False, **kwargs
    ) -> "FitStage":
        free = list(_DEFAULT_FREE[StageName(stage)])
        if fit_delta_v and StageName(stage) is StageName.DBC2:
            free.append("delta_v")
        return cls(stage=stage, free=free, frozen=dict(frozen or {}), **kwargs)


@dataclass
class FitResult:
    stage: StageName
    values: Dict[str, float]
    sigmas: Dict[str, float]
    covariance: Optional[np.ndarray]
    residual_norm: float
    params: SystemParams
    n_bar: float
    n_bar_sigma: float
    nuisances: Dict[str, float] = field(default_factory=dict)
    frozen: Dict[str, str] = field(default_factory=dict)
    signal_detected: bool = True
    covariance_singular: bool = False
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "values": self.values,
            "sigmas": self.sigmas,
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "residual_norm": self.residual_norm,
            "n_bar": self.n_bar,
            "n_bar_sigma": self.n_bar_sigma,
            "nuisances": self.nuisances,
            "frozen": self.frozen,
            "signal_detected": self.signal_detected,
            "covariance_singular": self.covariance_singular,
            "evaluations": self.evaluations,
        }


def configure_stage(params: SystemParams, stage: StageName) -> SystemParams:
    """Block the beams that are off in the given measurement configuration."""
    stage = StageName(stage)
    if stage is StageName.DBC1:
        return params.with_updates(p_v_aux=0.0, eta_loop=0.0).with_displacement(lo_amplitude=None)
    if stage is StageName.DBC2:
        return params.with_updates(eta_loop=0.0)
    return params


def fit_grid(params: SystemParams, halfwidth: float = TWO_PI * 20e3, n_points: int = 801) -> FrequencyGrid:
    """Linear window around the mechanical resonance used for fits."""
    return linear_window_grid(params.omega_m, halfwidth, n_points)


def peak_grid(params: SystemParams, stage: StageName, n_points: int = 801) -> FrequencyGrid:
    """Window of PEAK_WINDOW half-linewidths around the dressed mechanical resonance."""
    configured = configure_stage(params, stage)
    pole = mechanical_pole(solve_steady_state(configured), configured)
    return linear_window_grid(pole.real, PEAK_WINDOW * abs(pole.imag), n_points)


def synthetic_spectrum(params: SystemParams, stage: StageName, grid: FrequencyGrid) -> Spectrum:
    """Noise-free model spectrum of one measurement configuration."""
    configured = configure_stage(params, stage)
    ss = solve_steady_state(configured)
    return detected_spectrum(ss, configured, thermal_noise_model(configured), grid)


def synthetic_motion_spectrum(
    params: SystemParams, stage: StageName, grid: FrequencyGrid
) -> Spectrum:
    """Motional part of the model spectrum of one measurement configuration."""
    configured = configure_stage(params, stage)
    ss = solve_steady_state(configured)
    return motional_spectrum(ss, configured, thermal_noise_model(configured), grid)


def normalize_to_snl(values: np.ndarray, snl_level: float) -> np.ndarray:
    """Rescale a spectrum so its shot-noise level reads 0.5."""
    if not snl_level > 0:
        raise ValueError(f"snl_level must be positive, got {snl_level}")
    return 0.5 * np.asarray(values, dtype=float) / snl_level


def stage_phonons(
    params: SystemParams, stage: StageName, integration: IntegrationPolicy = IntegrationPolicy()
) -> float:
    """Phonon number of the configured stage."""
    configured = configure_stage(params, stage)
    ss = solve_steady_state(configured)
    return phonon_occupation(ss, configured, thermal_noise_model(configured), integration).n_bar


def _scale(name: str, params: SystemParams) -> float:
    if name in DETUNINGS:
        return params.kappa
    if name in COUPLINGS:
        return max(getattr(params, name), TWO_PI * 0.1)
    if name in NOISE_LEVELS:
        return max(getattr(params, name), frequency_noise_to_model(0.01))
    return 1.0


def _bounds(name: str) -> Tuple[float, float]:
    # Bounds in scaled units
    if name in DETUNINGS:
        return -3.0, 3.0
    if name in COUPLINGS:
        return 0.0, 1e3
    if name in NOISE_LEVELS:
        return 0.0, 1e4
    return -math.inf, math.inf


def _start_value(name: str, params: SystemParams) -> float:
    if name == "gamma" and params.gamma is None:
        return solve_steady_state(params).gamma_angle
    return getattr(params, name)


def _flat_result(data: Spectrum, stage: FitStage, init: SystemParams) -> FitResult:
    logger.warning(f"{stage.stage.value}: spectrum is flat; no signal to fit")
    return FitResult(
        stage=stage.stage,
        values={name: _start_value(name, init) for name in stage.free},
        sigmas={name: math.inf for name in stage.free},
        covariance=None,
        residual_norm=0.0,
        params=init,
        n_bar=math.nan,
        n_bar_sigma=math.inf,
        nuisances={"amplitude": 0.0, "offset": float(np.median(data.values)) - 0.5},
        frozen=dict(stage.frozen),
        signal_detected=False,
    )


def fit_stage(
    data: Spectrum,
    stage: FitStage,
    init: SystemParams,
    integration: IntegrationPolicy = IntegrationPolicy(),
) -> FitResult:
    """
    Fit one stage on log(S_det) and derive n_bar at the fitted values.

    Args:
        data: Detected spectrum normalized to SNL = 0.5
        stage: Free parameters and nuisance switches
        init: Template holding frozen values and initial guesses of the free ones
        integration: Quadrature policy for the derived phonon number

    Returns:
        FitResult with values, 1-sigma errors, covariance and n_bar

    Raises:
        FitDiverged: if the optimizer fails or the residual does not decrease
        BasinEscape: if a parameter ends on a bound other than a zero noise floor
    """
    values = data.values
    contrast = float(np.max(values) / np.median(values)) - 1.0
    if contrast < FLAT_CONTRAST:
        return _flat_result(data, stage, init)

    names = list(stage.free)
    scales = np.array([_scale(name, init) for name in names])
    x0 = [_start_value(name, init) / scale for name, scale in zip(names, scales)]
    lower = [_bounds(name)[0] for name in names]
    upper = [_bounds(name)[1] for name in names]
    if stage.fit_amplitude:
        x0.append(1.0)
        lower.append(0.0)
        upper.append(100.0)
    if stage.fit_offset:
        x0.append(0.0)
        lower.append(-0.5)
        upper.append(100.0)
    x0 = np.clip(np.array(x0), lower, upper)
    omega = data.grid.points
    log_data = np.log(values)
    weight = math.sqrt(stage.n_averages)
    n_free = len(names)

    def split(x: np.ndarray):
        physical = dict(zip(names, x[:n_free] * scales))
        extra = list(x[n_free:])
        amplitude = extra.pop(0) if stage.fit_amplitude else 1.0
        offset = extra.pop(0) if stage.fit_offset else 0.0
        return physical, amplitude, offset

    def residuals(x: np.ndarray) -> np.ndarray:
        physical, amplitude, offset = split(x)
        try:
            params = configure_stage(init.with_updates(**physical), stage.stage)
            ss = solve_steady_state(params)
            model = detected_psd(ss, params, thermal_noise_model(params), omega)
        except (CFCError, ValueError) as exc:
            logger.debug(f"Model evaluation failed at {physical}: {exc}")
            return np.full(omega.size, FAILED_RESIDUAL)
        model = 0.5 + amplitude * (model - 0.5) + offset
        return weight * (np.log(np.maximum(model, MODEL_FLOOR)) - log_data)

    initial_cost = 0.5 * float(np.sum(residuals(x0) ** 2))
    logger.debug(f"{stage.stage.value}: fitting {names} from {dict(zip(names, x0[:n_free] * scales))}")
    result = least_squares(
        residuals,
        x0,
        bounds=(lower, upper),
        x_scale="jac",
        diff_step=1e-7,
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=400,
    )
    if result.status == 0:
        logger.warning(f"{stage.stage.value}: evaluation budget reached before convergence")
    if result.status < 0 or not np.isfinite(result.cost) or result.cost > initial_cost:
        logger.error(f"{stage.stage.value} fit diverged: {result.message}")
        raise FitDiverged(f"{stage.stage.value} fit failed: {result.message}")

    labels = names + (["amplitude"] if stage.fit_amplitude else []) + (["offset"] if stage.fit_offset else [])
    for label, active in zip(labels, result.active_mask):
        if active == 0:
            continue
        if label in NOISE_LEVELS and active < 0:
            continue
        logger.error(f"{stage.stage.value}: parameter {label} ended on its bound")
        raise BasinEscape(f"Parameter {label} hit its bound; start from a better initial guess")

    jacobian = result.jac
    curvature = jacobian.T @ jacobian
    dof = max(omega.size - len(labels), 1)
    variance = 2.0 * result.cost / dof
    all_scales = np.concatenate([scales, np.ones(len(labels) - n_free)])
    condition = np.linalg.cond(curvature)
    covariance_singular = not np.isfinite(condition) or condition > CONDITION_LIMIT
    if covariance_singular:
        logger.warning(f"{stage.stage.value}: curvature matrix is singular; covariance unavailable")
        covariance = None
        diagonal = np.diag(curvature)
        with np.errstate(divide="ignore"):
            sigma_scaled = np.sqrt(np.where(diagonal > 0, variance / diagonal, np.inf))
        sigmas_all = sigma_scaled * all_scales
    else:
        covariance_all = np.linalg.inv(curvature) * variance * np.outer(all_scales, all_scales)
        covariance = covariance_all[:n_free, :n_free]
        sigmas_all = np.sqrt(np.clip(np.diag(covariance_all), 0.0, None))

    physical, amplitude, offset = split(result.x)
    if "gamma" in physical:
        physical["gamma"] = math.remainder(physical["gamma"], TWO_PI)
    fitted = init.with_updates(**physical)
    n_bar = stage_phonons(fitted, stage.stage, integration)
    sigmas = dict(zip(names, sigmas_all[:n_free].tolist()))

    fit = FitResult(
        stage=stage.stage,
        values=physical,
        sigmas=sigmas,
        covariance=covariance,
        residual_norm=float(np.linalg.norm(result.fun)),
        params=fitted,
        n_bar=n_bar,
        n_bar_sigma=math.nan,
        nuisances={"amplitude": amplitude, "offset": offset},
        frozen=dict(stage.frozen),
        covariance_singular=covariance_singular,
        evaluations=int(result.nfev),
    )
    fit.n_bar_sigma = propagate_phonon_uncertainty(fit, integration=integration).sigma
    logger.info(
        f"{stage.stage.value}: {', '.join(f'{k}={v:.6g}' for k, v in physical.items())}; "
        f"n_bar={n_bar:.4g} +/- {fit.n_bar_sigma:.2g}"
    )
    return fit


def propagate_phonon_uncertainty(
    fit: FitResult,
    areas: Optional[AreaInputs] = None,
    integration: IntegrationPolicy = IntegrationPolicy(),
) -> PropagatedValue:
    """
    Standard error of n_bar from the fitted-parameter covariance.

    With ``areas``, the fitted n_bar serves as the calibration of an area-ratio
    estimate and the area errors are added in quadrature.

    Args:
        fit: Stage result with covariance or per-parameter sigmas
        areas: Optional peak areas with their standard errors
        integration: Quadrature policy

    Returns:
        PropagatedValue with n_bar and sigma
    """
    names = list(fit.values)
    values = np.array([fit.values[name] for name in names])

    def phonons(vector: np.ndarray) -> float:
        params = fit.params.with_updates(**dict(zip(names, vector.tolist())))
        return stage_phonons(params, fit.stage, integration)

    sigmas = [fit.sigmas[name] for name in names]
    if not np.all(np.isfinite(sigmas)):
        propagated = PropagatedValue(fit.n_bar, math.inf, "unconstrained")
    else:
        propagated = propagate_uncertainty(phonons, values, fit.covariance, sigmas)
    if areas is None:
        return propagated
    return combine_area_ratio(propagated.value, propagated.sigma, areas)


def fit_chain(
    spectra: Dict[StageName, Spectrum],
    template: SystemParams,
    stages: Optional[Sequence[FitStage]] = None,
    integration: IntegrationPolicy = IntegrationPolicy(),
) -> List[FitResult]:
    """
    Run the stages in order, freezing each stage's fitted values for the next.

    Args:
        spectra: Measured spectrum per stage
        template: Initial guesses and fixed parameters
        stages: Stage definitions; the default three-stage chain when omitted
        integration: Quadrature policy

    Returns:
        One FitResult per stage, in order
    """
    frozen: Dict[str, str] = {}
    if stages is None:
        stages = [FitStage.default(name) for name in StageName if name in spectra]
    results: List[FitResult] = []
    params = template
    for stage in stages:
        stage = stage.model_copy(update={"frozen": {**frozen, **stage.frozen}})
        fit = fit_stage(spectra[stage.stage], stage, params, integration)
        results.append(fit)
        params = fit.params
        frozen.update({name: stage.stage.value for name in stage.free})
    return results


def heuristic_init(data: Spectrum, stage: FitStage, template: SystemParams) -> SystemParams:
    """
    Initial guesses from the data relative to the template's own spectrum.

    Noise levels scale with the excess of the spectral wings over the SNL, the
    coupling with the square root of the peak-area ratio, and the probe detuning
    with the ratio of peak shifts from the bare mechanical frequency.
    """
    model = synthetic_spectrum(template, stage.stage, data.grid)
    omega = data.grid.points
    updates: Dict[str, float] = {}

    def wing(values: np.ndarray) -> float:
        edge = max(values.size // 10, 1)
        return float(np.median(np.concatenate([values[:edge], values[-edge:]])) - 0.5)

    def area(values: np.ndarray) -> float:
        excess = np.clip(values - 0.5 - max(wing(values), 0.0), 0.0, None)
        return float(trapezoid(excess, omega))

    for name in stage.free:
        current = getattr(template, name)
        if name in NOISE_LEVELS and wing(model.values) > 0 and wing(data.values) > 0:
            updates[name] = current * wing(data.values) / wing(model.values)
        elif name in COUPLINGS and area(model.values) > 0 and area(data.values) > 0:
            updates[name] = current * math.sqrt(area(data.values) / area(model.values))
        elif name == "delta_h":
            shift_model = omega[np.argmax(model.values)] - template.omega_m
            shift_data = omega[np.argmax(data.values)] - template.omega_m
            if shift_model != 0 and shift_data / shift_model > 0:
                updates[name] = current * float(np.clip(shift_data / shift_model, 0.2, 5.0))
    logger.debug(f"{stage.stage.value}: heuristic initial guesses {updates}")
    return template.with_updates(**updates) if updates else template
