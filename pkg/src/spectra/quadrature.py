"""
Phonon occupation n = (1/4pi) int (1 + w^2/Omega_m^2) S_QQ(w) dw - 1/2.

The integrand is a narrow mechanical line on a broad cavity pedestal. The real
line is split into a tangent-mapped interval around each mechanical peak, which
flattens the Lorentzian, and geometric intervals elsewhere. Gauss-Legendre pairs
of order n and 2n give per-interval error estimates, and intervals are bisected
until the total meets the relative tolerance. Beyond the window the integrand
falls as 1/w^2 and that tail is added analytically.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import roots_legendre

from src.errors import IntegrationFailure
from src.model.core import NoiseModel, SteadyState
from src.model.params import SystemParams
from src.spectra.psd import s_qq
from src.spectra.transfer import mechanical_pole


class IntegrationPolicy(BaseModel):
    """Window, tolerance and budget of the phonon-number quadrature."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rel_tol: float = Field(1e-6, gt=0.0, description="Relative tolerance on the integral")
    window_kappas: float = Field(10.0, gt=0.0, description="Window half-span in units of kappa")
    window_linewidths: float = Field(
        50.0, gt=0.0, description="Minimum window half-span in mechanical linewidths"
    )
    peak_halfwidths: float = Field(
        200.0, gt=1.0, description="Half-span of the tangent-mapped peak interval in half-widths"
    )
    gauss_order: int = Field(16, ge=4, description="Lower Gauss-Legendre order of each pair")
    max_rounds: int = Field(40, ge=1, description="Bisection rounds before giving up")
    max_intervals: int = Field(20_000, ge=10, description="Interval budget")


@dataclass(frozen=True)
class PhononEstimate:
    """Phonon occupation with its quadrature error estimate."""

    n_bar: float
    error: float
    evaluations: int = 0


@dataclass(frozen=True)
class _Interval:
    lo: float
    hi: float
    # Tangent mapping omega = center + width * tan(t) when width > 0; lo/hi are then in t
    center: float = 0.0
    width: float = 0.0

    def halves(self) -> Tuple["_Interval", "_Interval"]:
        mid = 0.5 * (self.lo + self.hi)
        return (
            _Interval(self.lo, mid, self.center, self.width),
            _Interval(mid, self.hi, self.center, self.width),
        )


@lru_cache(maxsize=8)
def _gauss_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    return roots_legendre(order)


def _nodes(interval: _Interval, order: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = _gauss_rule(order)
    half = 0.5 * (interval.hi - interval.lo)
    mid = 0.5 * (interval.hi + interval.lo)
    t = mid + half * x
    if interval.width > 0:
        sec2 = 1.0 / np.cos(t) ** 2
        return interval.center + interval.width * np.tan(t), half * w * interval.width * sec2
    return t, half * w


def _side_partition(peak: float, width: float, span: float, window: float) -> List[_Interval]:
    """Intervals covering [0, window] around a peak at ``peak`` > 0."""
    intervals: List[_Interval] = []
    lo = max(0.0, peak - span)
    hi = min(window, peak + span)
    intervals.append(
        _Interval(math.atan((lo - peak) / width), math.atan((hi - peak) / width), peak, width)
    )
    # Geometric intervals from the peak interval down to zero and up to the window
    edge, step = lo, span
    while edge > 0.0:
        nxt = max(0.0, edge - step)
        intervals.append(_Interval(nxt, edge))
        edge, step = nxt, 2.0 * step
    edge, step = hi, span
    while edge < window:
        nxt = min(window, edge + step)
        intervals.append(_Interval(edge, nxt))
        edge, step = nxt, 2.0 * step
    return intervals


def _mirror(interval: _Interval) -> _Interval:
    if interval.width > 0:
        return _Interval(-interval.hi, -interval.lo, -interval.center, interval.width)
    return _Interval(-interval.hi, -interval.lo)


def phonon_occupation(
    ss: SteadyState,
    params: SystemParams,
    noise: NoiseModel,
    integration: IntegrationPolicy = IntegrationPolicy(),
) -> PhononEstimate:
    """
    Integrate the weighted position PSD over all frequencies.

    The caller is responsible for passing a stable configuration.

    Args:
        ss: Solved steady state
        params: System parameters
        noise: Input-noise correlations
        integration: Quadrature policy

    Returns:
        PhononEstimate with value and quadrature error

    Raises:
        IntegrationFailure: if refinement exceeds the policy budget
    """
    pole = mechanical_pole(ss, params)
    peak = abs(pole.real)
    half_width = max(abs(pole.imag), 0.5 * params.gamma_m)
    window = peak + max(
        integration.window_linewidths * 2.0 * half_width, integration.window_kappas * params.kappa
    )
    span = integration.peak_halfwidths * half_width

    def weighted(omega: np.ndarray) -> np.ndarray:
        return (1.0 + (omega / params.omega_m) ** 2) * s_qq(ss, params, noise, omega)

    positive = _side_partition(peak, half_width, span, window)
    pending = positive + [_mirror(interval) for interval in positive]
    accepted_value = 0.0
    accepted_error = 0.0
    low_order = integration.gauss_order
    evaluations = 0

    for round_index in range(1, integration.max_rounds + 1):
        nodes, weights_low, weights_high = [], [], []
        for interval in pending:
            x_low, w_low = _nodes(interval, low_order)
            x_high, w_high = _nodes(interval, 2 * low_order)
            nodes.extend([x_low, x_high])
            weights_low.append(w_low)
            weights_high.append(w_high)
        values = weighted(np.concatenate(nodes))
        evaluations += values.size

        # Each interval owns 3n consecutive values: n low-order then 2n high-order
        per_interval = values.reshape(len(pending), 3 * low_order)
        low = np.sum(per_interval[:, :low_order] * np.array(weights_low), axis=1)
        high = np.sum(per_interval[:, low_order:] * np.array(weights_high), axis=1)
        errors = np.abs(high - low)

        total = accepted_value + float(np.sum(high))
        budget = integration.rel_tol * abs(total)
        total_error = accepted_error + float(np.sum(errors))
        logger.debug(
            f"Quadrature round {round_index}: {len(pending)} active intervals, "
            f"error {total_error:.3e} / budget {budget:.3e}"
        )
        if total_error <= budget:
            accepted_value = total
            accepted_error = total_error
            pending = []
            break

        # Newly accepted intervals may use at most half of the remaining budget
        share = max(budget - accepted_error, 0.0) / (2.0 * len(pending))
        refine = errors > share
        accepted_value += float(np.sum(high[~refine]))
        accepted_error += float(np.sum(errors[~refine]))
        pending = [half for interval, flag in zip(pending, refine) if flag for half in interval.halves()]
        if len(pending) > integration.max_intervals:
            break

    if pending:
        logger.error(f"Quadrature budget exhausted with {len(pending)} intervals pending")
        raise IntegrationFailure(
            f"Adaptive quadrature did not reach rel_tol={integration.rel_tol} "
            f"within {integration.max_rounds} rounds"
        )

    # 1/w^2 tails beyond +/- window
    edges = np.array([-window, window])
    tail = float(np.sum(weighted(edges)) * window)
    integral = accepted_value + tail
    n_bar = integral / (4.0 * math.pi) - 0.5
    error = accepted_error / (4.0 * math.pi)
    logger.debug(f"n_bar={n_bar:.6e} +/- {error:.2e} ({evaluations} evaluations)")
    return PhononEstimate(n_bar=n_bar, error=error, evaluations=evaluations + 2)
