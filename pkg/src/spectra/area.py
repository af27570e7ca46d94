"""Lorentzian peak areas and the area-ratio phonon estimator."""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import curve_fit

from src.errors import FitDiverged
from src.spectra.psd import Spectrum

# Peak excess must exceed this many robust baseline deviations
PEAK_SNR_THRESHOLD = 10.0


@dataclass(frozen=True)
class LorentzianFit:
    center: float
    halfwidth: float
    amplitude: float
    offset: float
    area: float
    area_error: float


def lorentzian(omega, center, halfwidth, amplitude, offset):
    return offset + amplitude * halfwidth**2 / ((omega - center) ** 2 + halfwidth**2)


def phonons_from_area_ratio(n_calib: float, area_calib: float, area_det: float) -> float:
    """
    Scale a calibrated phonon number by the ratio of peak areas.

    Args:
        n_calib: Phonon number of the calibration spectrum
        area_calib: Peak area of the calibration spectrum
        area_det: Peak area of the spectrum to evaluate

    Returns:
        n_calib * area_det / area_calib
    """
    if not area_calib > 0:
        logger.error(f"Calibration area must be positive, got {area_calib}")
        raise ValueError("area_calib must be positive")
    return n_calib / area_calib * area_det


def _window_slice(spec: Spectrum, window: Optional[Tuple[float, float]]):
    points = spec.grid.points
    if window is None:
        return points, spec.values
    lo, hi = window
    mask = (points >= lo) & (points <= hi)
    if np.count_nonzero(mask) < 5:
        raise ValueError(f"Window [{lo}, {hi}] holds fewer than 5 spectrum points")
    return points[mask], spec.values[mask]


def fit_lorentzian(spec: Spectrum, window: Optional[Tuple[float, float]] = None) -> LorentzianFit:
    """
    Least-squares fit of offset + Lorentzian inside a frequency window.

    Args:
        spec: Spectrum with a single dominant peak in the window
        window: Optional (lo, hi) bounds in the grid units (rad/s)

    Returns:
        LorentzianFit with area = pi * amplitude * halfwidth

    Raises:
        FitDiverged: if the peak is not above the baseline or the fit fails
    """
    omega, values = _window_slice(spec, window)
    baseline = float(np.median(values))
    deviation = float(np.median(np.abs(values - baseline)))
    excess = float(np.max(values)) - baseline
    if excess <= PEAK_SNR_THRESHOLD * max(deviation, 1e-9 * abs(baseline), 1e-300):
        logger.error(f"No peak above baseline (excess={excess:.3e}, deviation={deviation:.3e})")
        raise FitDiverged("Peak SNR below threshold")

    # Initial guesses from the half-maximum crossing
    peak_index = int(np.argmax(values))
    center0 = omega[peak_index]
    above = omega[values - baseline >= 0.5 * excess]
    halfwidth0 = max(0.5 * (above[-1] - above[0]), 0.5 * float(np.min(np.diff(omega))))
    scale_x = halfwidth0
    scale_y = excess

    x = (omega - center0) / scale_x
    y = values / scale_y
    try:
        popt, pcov = curve_fit(
            lorentzian,
            x,
            y,
            p0=[0.0, 1.0, 1.0, baseline / scale_y],
            maxfev=20_000,
        )
    except (RuntimeError, ValueError) as exc:
        logger.error(f"Lorentzian fit failed: {exc}")
        raise FitDiverged(f"Lorentzian fit failed: {exc}")

    center = center0 + popt[0] * scale_x
    halfwidth = abs(popt[1]) * scale_x
    amplitude = popt[2] * scale_y
    offset = popt[3] * scale_y
    area = math.pi * amplitude * halfwidth
    # d(area) = pi * (hw dA + A dhw) in the scaled fit variables
    grad = np.array([0.0, math.pi * popt[2], math.pi * abs(popt[1]), 0.0]) * scale_x * scale_y
    if np.all(np.isfinite(pcov)):
        area_error = float(np.sqrt(max(grad @ pcov @ grad, 0.0)))
    else:
        area_error = math.inf
    return LorentzianFit(center, halfwidth, amplitude, offset, area, area_error)


def lorentzian_area(spec: Spectrum, window: Optional[Tuple[float, float]] = None) -> float:
    """Area pi * amplitude * halfwidth of the fitted Lorentzian."""
    return fit_lorentzian(spec, window).area
