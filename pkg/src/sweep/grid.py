"""
Phonon-number sweeps over one or two parameter axes.

Every cell re-solves the steady state, checks stability and only then integrates
the position spectrum. Unstable or failed cells hold +inf and carry a mask code.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.errors import CFCError
from src.model.core import solve_steady_state, thermal_noise_model
from src.model.params import SystemParams
from src.spectra.quadrature import IntegrationPolicy, phonon_occupation
from src.stability.checks import MaskCode, Method, check_stability
from src.sweep.axes import Axis, AxisName, apply_axis, apply_coordinates
from src.sweep.pool import map_cells, unravel


@dataclass(frozen=True)
class CellOutcome:
    n_bar: float
    code: MaskCode
    error: Optional[str] = None


@dataclass
class SweepResult:
    """n_bar[i, j] belongs to (axis1[i], axis2[j]); +inf marks unstable or undetermined cells."""

    axis1: Axis
    axis2: Axis
    n_bar: np.ndarray
    mask: np.ndarray
    errors: Dict[Tuple[int, int], str] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)

    def argmin(self) -> Tuple[float, float, float]:
        """(axis1 value, axis2 value, n_bar) of the lowest stable cell."""
        if not np.any(np.isfinite(self.n_bar)):
            raise ValueError("Sweep holds no stable cell")
        i, j = np.unravel_index(np.argmin(self.n_bar), self.n_bar.shape)
        return self.axis1.values[i], self.axis2.values[j], float(self.n_bar[i, j])

    @property
    def complete(self) -> bool:
        return not np.any(self.mask == MaskCode.UNDETERMINED)


@dataclass
class Curve:
    axis: Axis
    n_bar: np.ndarray
    mask: np.ndarray
    label: str = ""

    def argmin(self) -> Tuple[float, float]:
        if not np.any(np.isfinite(self.n_bar)):
            raise ValueError("Curve holds no stable point")
        index = int(np.argmin(self.n_bar))
        return self.axis.values[index], float(self.n_bar[index])


@dataclass
class Band:
    """Pointwise envelope of a curve under relative parameter variations."""

    nominal: Curve
    lower: np.ndarray
    upper: np.ndarray
    varied: List[str]
    relative: float


def template_hash(params: SystemParams) -> str:
    payload = json.dumps(params.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def evaluate_point(
    params: SystemParams,
    integration: IntegrationPolicy = IntegrationPolicy(),
    method: Method = Method.ARGUMENT_PRINCIPLE,
    stability_checked: bool = True,
) -> CellOutcome:
    """
    Stability-gated phonon number of one configuration.

    Numerical failures are caught and reported as undetermined.

    Args:
        params: System parameters
        integration: Quadrature policy
        method: Stability method
        stability_checked: Skip the stability check when False

    Returns:
        CellOutcome; n_bar is +inf unless the configuration is stable
    """
    try:
        ss = solve_steady_state(params)
        if stability_checked:
            report = check_stability(ss, params, method=method)
            if report.code != MaskCode.STABLE:
                return CellOutcome(math.inf, report.code)
        estimate = phonon_occupation(ss, params, thermal_noise_model(params), integration)
        return CellOutcome(estimate.n_bar, MaskCode.STABLE)
    except (CFCError, ValueError, np.linalg.LinAlgError) as exc:
        return CellOutcome(math.inf, MaskCode.UNDETERMINED, f"{type(exc).__name__}: {exc}")


def sweep_2d(
    template: SystemParams,
    axis1: Axis,
    axis2: Axis,
    integration: IntegrationPolicy = IntegrationPolicy(),
    method: Method = Method.ARGUMENT_PRINCIPLE,
    threads: Optional[int] = None,
    show_progress: bool = True,
) -> SweepResult:
    """
    Phonon number on the product grid axis1 x axis2.

    Args:
        template: Parameters shared by all cells
        axis1: Row axis
        axis2: Column axis
        integration: Quadrature policy
        method: Stability method gating each cell
        threads: Worker count
        show_progress: Whether to draw a progress bar

    Returns:
        SweepResult with the n_bar matrix, stability mask and run metadata
    """
    shape = (len(axis1), len(axis2))
    names = [axis1.name, axis2.name]

    def cell(index: int) -> CellOutcome:
        i, j = unravel(index, shape)
        try:
            params = apply_coordinates(template, names, [axis1.values[i], axis2.values[j]])
        except ValueError as exc:
            return CellOutcome(math.inf, MaskCode.UNDETERMINED, f"ValidationError: {exc}")
        return evaluate_point(params, integration, method)

    outcomes = map_cells(cell, shape[0] * shape[1], threads, "Sweep", show_progress)
    n_bar = np.full(shape, math.inf)
    mask = np.empty(shape, dtype=int)
    errors: Dict[Tuple[int, int], str] = {}
    for index, outcome in enumerate(outcomes):
        i, j = unravel(index, shape)
        n_bar[i, j] = outcome.n_bar
        mask[i, j] = int(outcome.code)
        if outcome.error is not None:
            errors[(i, j)] = outcome.error
    if errors:
        logger.warning(f"{len(errors)} of {n_bar.size} sweep cells undetermined")

    result = SweepResult(
        axis1,
        axis2,
        n_bar,
        mask,
        errors,
        meta={
            "template_hash": template_hash(template),
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "method": Method(method).value,
        },
    )
    if np.any(np.isfinite(n_bar)):
        a, b, best = result.argmin()
        logger.info(f"Sweep minimum n_bar={best:.4g} at {axis1.name.value}={a:.4g}, {axis2.name.value}={b:.4g}")
    return result


def scan_1d(
    template: SystemParams,
    axis: Axis,
    label: str = "",
    integration: IntegrationPolicy = IntegrationPolicy(),
    method: Method = Method.ARGUMENT_PRINCIPLE,
    threads: Optional[int] = None,
    show_progress: bool = False,
) -> Curve:
    """Phonon number along a single axis."""

    def cell(index: int) -> CellOutcome:
        try:
            params = apply_axis(template, axis.name, axis.values[index])
        except ValueError as exc:
            return CellOutcome(math.inf, MaskCode.UNDETERMINED, f"ValidationError: {exc}")
        return evaluate_point(params, integration, method)

    outcomes = map_cells(cell, len(axis), threads, label or axis.name.value, show_progress)
    n_bar = np.array([outcome.n_bar for outcome in outcomes])
    mask = np.array([int(outcome.code) for outcome in outcomes])
    return Curve(axis, n_bar, mask, label)


def detuning_scan(
    template: SystemParams,
    delta_h_over_kappa: Sequence[float],
    dbc_only: bool = False,
    integration: IntegrationPolicy = IntegrationPolicy(),
    threads: Optional[int] = None,
) -> Dict[str, Curve]:
    """
    Phonon number versus probe detuning, with and without feedback.

    The DBC curve blocks the feedback (eta_loop = 0) and keeps the auxiliary beam.
    The CFC curve keeps the template's gamma and tau.

    Args:
        template: Parameters shared by both curves
        delta_h_over_kappa: Probe detunings in units of kappa
        dbc_only: Skip the CFC curve
        integration: Quadrature policy
        threads: Worker count

    Returns:
        Mapping with a "dbc" curve and, unless dbc_only, a "cfc" curve
    """
    axis = Axis(name=AxisName.DELTA_H_OVER_KAPPA, values=list(delta_h_over_kappa))
    curves = {
        "dbc": scan_1d(template.with_updates(eta_loop=0.0), axis, "dbc", integration, threads=threads)
    }
    if not dbc_only:
        curves["cfc"] = scan_1d(template, axis, "cfc", integration, threads=threads)
    for name, curve in curves.items():
        if np.any(np.isfinite(curve.n_bar)):
            where, best = curve.argmin()
            logger.info(f"Detuning scan ({name}): minimum n_bar={best:.4g} at delta_h/kappa={where:.3f}")
    return curves


def delay_scan(
    template: SystemParams,
    omega_m_tau: Sequence[float],
    integration: IntegrationPolicy = IntegrationPolicy(),
    threads: Optional[int] = None,
) -> Curve:
    """Phonon number versus Omega_m * tau at the template's gamma and detunings."""
    axis = Axis(name=AxisName.OMEGA_M_TAU, values=list(omega_m_tau))
    return scan_1d(template, axis, "delay", integration, threads=threads)


def angle_scan(
    template: SystemParams,
    values: Sequence[float],
    axis_name: AxisName = AxisName.GAMMA,
    integration: IntegrationPolicy = IntegrationPolicy(),
    threads: Optional[int] = None,
) -> Curve:
    """Phonon number versus the displacement angle gamma or the interference angle theta."""
    axis_name = AxisName(axis_name)
    if axis_name not in (AxisName.GAMMA, AxisName.THETA):
        raise ValueError(f"angle_scan sweeps gamma or theta, not {axis_name.value}")
    axis = Axis(name=axis_name, values=list(values))
    return scan_1d(template, axis, axis_name.value, integration, threads=threads)


def _scaled(params: SystemParams, name: str, factor: float) -> SystemParams:
    value = getattr(params, name)
    if value is None:
        raise ValueError(f"Cannot scale unset parameter {name}")
    scaled = value * factor
    if name.startswith("eta"):
        scaled = min(scaled, 1.0)
    return params.with_updates(**{name: scaled})


def uncertainty_band(
    template: SystemParams,
    curve_function: Callable[[SystemParams], Curve],
    varied: Sequence[str],
    relative: float = 0.1,
) -> Band:
    """
    Envelope of a curve when each named parameter is scaled by (1 +/- relative).

    Efficiencies are capped at 1. Unstable points of a variant are ignored for
    the envelope.

    Args:
        template: Nominal parameters
        curve_function: Maps parameters to a curve on a fixed axis
        varied: SystemParams field names to vary, e.g. ("eta_loop", "tau")
        relative: Relative variation

    Returns:
        Band with the nominal curve and pointwise lower/upper envelopes
    """
    if not 0.0 < relative < 1.0:
        raise ValueError(f"relative must lie in (0, 1), got {relative}")
    nominal = curve_function(template)
    stacked = [nominal.n_bar]
    for name in varied:
        for factor in (1.0 - relative, 1.0 + relative):
            stacked.append(curve_function(_scaled(template, name, factor)).n_bar)
    values = np.vstack(stacked)
    finite = np.where(np.isfinite(values), values, np.nan)
    # Columns without any stable variant stay at +inf
    filled = np.where(np.isnan(finite).all(axis=0), np.inf, finite)
    lower = np.nanmin(filled, axis=0)
    upper = np.nanmax(filled, axis=0)
    return Band(nominal, lower, upper, list(varied), relative)


def excess_noise_phonons(
    params: SystemParams, integration: IntegrationPolicy = IntegrationPolicy()
) -> float:
    """
    Phonons attributable to technical noise.

    Difference between n_bar with the fitted detuning-noise levels and n_bar with
    both levels set to zero.

    Raises:
        CFCError: if either configuration is unstable or fails to integrate
    """
    with_noise = evaluate_point(params, integration)
    without = evaluate_point(params.with_updates(s_dd_h=0.0, s_dd_v=0.0), integration)
    for outcome in (with_noise, without):
        if outcome.code != MaskCode.STABLE:
            logger.error(f"Excess-noise estimate needs a stable point ({outcome.error or outcome.code.name})")
            raise CFCError(outcome.error or f"Configuration is {outcome.code.name.lower()}")
    excess = with_noise.n_bar - without.n_bar
    logger.info(f"Excess-noise phonons: {excess:.4g} ({with_noise.n_bar:.4g} vs {without.n_bar:.4g})")
    return excess
