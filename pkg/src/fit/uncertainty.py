"""First-order error propagation for derived quantities."""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from loguru import logger

from src.errors import SingularCovariance


@dataclass(frozen=True)
class AreaInputs:
    """Peak areas with their integration standard errors."""

    area_calib: float
    area_calib_sigma: float
    area_det: float
    area_det_sigma: float


@dataclass(frozen=True)
class PropagatedValue:
    value: float
    sigma: float
    method: str


def finite_difference_gradient(
    function: Callable[[np.ndarray], float],
    values: np.ndarray,
    steps: np.ndarray,
) -> np.ndarray:
    """Central-difference gradient of ``function`` at ``values``."""
    gradient = np.zeros(values.size)
    for k in range(values.size):
        shift = np.zeros(values.size)
        shift[k] = steps[k]
        gradient[k] = (function(values + shift) - function(values - shift)) / (2.0 * steps[k])
    return gradient


def _check_covariance(covariance: np.ndarray) -> None:
    if covariance.ndim != 2 or covariance.shape[0] != covariance.shape[1]:
        raise SingularCovariance("Covariance must be square")
    if not np.all(np.isfinite(covariance)):
        raise SingularCovariance("Covariance holds non-finite entries")
    if np.any(np.diag(covariance) < 0):
        raise SingularCovariance("Covariance has negative variances")


def propagate_uncertainty(
    function: Callable[[np.ndarray], float],
    values: Sequence[float],
    covariance: Optional[np.ndarray],
    sigmas: Optional[Sequence[float]] = None,
    relative_step: float = 1e-4,
) -> PropagatedValue:
    """
    sigma_f^2 = grad(f)^T C grad(f), with the gradient from central differences.

    When the covariance is missing or unusable, the per-parameter sigmas are
    used instead, which drops the correlations.

    Args:
        function: Scalar function of the parameter vector
        values: Parameter vector
        covariance: Parameter covariance, or None
        sigmas: Per-parameter standard errors for the fallback
        relative_step: Difference step relative to each sigma (or value)

    Returns:
        PropagatedValue with the function value and its standard error
    """
    values = np.asarray(values, dtype=float)
    center = float(function(values))
    method = "covariance"
    try:
        if covariance is None:
            raise SingularCovariance("No covariance available")
        covariance = np.asarray(covariance, dtype=float)
        _check_covariance(covariance)
        spread = np.sqrt(np.diag(covariance))
    except SingularCovariance as exc:
        if sigmas is None:
            logger.error(f"Cannot propagate: {exc}")
            raise
        logger.warning(f"{exc}; falling back to per-parameter differencing")
        method = "per-parameter"
        spread = np.asarray(sigmas, dtype=float)
        covariance = np.diag(spread**2)

    if np.all(spread == 0.0):
        return PropagatedValue(center, 0.0, method)
    scale = np.where(spread > 0, spread, np.abs(values))
    steps = relative_step * np.where(scale > 0, scale, 1.0)
    gradient = finite_difference_gradient(function, values, steps)
    variance = float(gradient @ covariance @ gradient)
    return PropagatedValue(center, math.sqrt(max(variance, 0.0)), method)


def combine_area_ratio(
    n_calib: float, n_calib_sigma: float, areas: AreaInputs
) -> PropagatedValue:
    """
    n = n_calib * A_det / A_calib with relative errors added in quadrature.

    Raises:
        ValueError: if the calibration area is not positive
    """
    if not areas.area_calib > 0:
        raise ValueError("area_calib must be positive")
    value = n_calib * areas.area_det / areas.area_calib
    terms: Dict[str, float] = {
        "n_calib": n_calib_sigma / n_calib if n_calib else 0.0,
        "area_calib": areas.area_calib_sigma / areas.area_calib,
        "area_det": areas.area_det_sigma / areas.area_det if areas.area_det else 0.0,
    }
    relative = math.sqrt(sum(term**2 for term in terms.values()))
    return PropagatedValue(value, abs(value) * relative, "area-ratio")
