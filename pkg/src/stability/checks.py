"""
Stability verdicts for single configurations and over parameter grids.

Two methods are offered. The argument-principle method counts the zeros of
det(A(w) + iwI) in the upper half plane and is exact up to the search region.
The sufficient-bound method is a Rouche-type test: if the feedback-free system
is stable and the loop gain stays below rho <= 1 on the real axis, the closed
loop is stable. It can only err towards "unstable".
"""

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from src.errors import CFCError
from src.model.core import SteadyState, delay_split, solve_steady_state
from src.model.params import SystemParams
from src.spectra.transfer import find_poles
from src.stability.contour import (
    SearchRegion,
    default_region,
    loop_gain,
    marginal_band,
    open_loop_stable,
    winding_number,
)
from src.sweep.axes import Axis, apply_coordinates
from src.sweep.pool import map_cells, unravel


class Verdict(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


class Method(str, Enum):
    ARGUMENT_PRINCIPLE = "argument-principle"
    SUFFICIENT_BOUND = "sufficient-bound"


class MaskCode(IntEnum):
    STABLE = 0
    UNSTABLE = 1
    UNDETERMINED = 2
    MARGINAL = 3


_VERDICT_CODES = {
    Verdict.STABLE: MaskCode.STABLE,
    Verdict.UNSTABLE: MaskCode.UNSTABLE,
    Verdict.MARGINAL: MaskCode.MARGINAL,
}


@dataclass(frozen=True)
class StabilityReport:
    verdict: Verdict
    pole_count_upper_half: int
    nearest_pole: complex
    method: Method
    search_region: SearchRegion
    max_loop_gain: Optional[float] = None

    @property
    def code(self) -> MaskCode:
        return _VERDICT_CODES[self.verdict]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "pole_count_upper_half": self.pole_count_upper_half,
            "nearest_pole": [self.nearest_pole.real, self.nearest_pole.imag],
            "method": self.method.value,
            "search_region": self.search_region.model_dump(),
            "max_loop_gain": self.max_loop_gain,
        }


def _nearest_pole(poles: np.ndarray) -> complex:
    return complex(poles[np.argmin(np.abs(poles.imag))])


def _real_axis_grid(ss: SteadyState, params: SystemParams, region: SearchRegion) -> np.ndarray:
    # Uniform coverage plus geometric clusters at every open-loop and closed-loop resonance
    a_now, _ = delay_split(ss, params)
    centers = np.concatenate([1j * np.linalg.eigvals(a_now), find_poles(ss, params)])
    upper = max(region.re_max, 1.0)
    pieces = [np.linspace(0.0, upper, 4001)]
    for center in centers:
        width = max(abs(center.imag), 1e-3 * params.gamma_m)
        offsets = np.geomspace(1e-2 * width, 1e3 * width, 200)
        pieces.append(abs(center.real) + np.concatenate([-offsets[::-1], [0.0], offsets]))
    grid = np.concatenate(pieces)
    return np.unique(grid[(grid >= 0.0) & (grid <= upper)])


def max_loop_gain(
    ss: SteadyState, params: SystemParams, region: Optional[SearchRegion] = None
) -> float:
    """Supremum of |loop_gain| over a resolved grid of real w >= 0."""
    region = region or default_region(params)
    grid = _real_axis_grid(ss, params, region)
    return float(np.max(np.abs(loop_gain(ss, params, grid))))


def check_stability(
    ss: SteadyState,
    params: SystemParams,
    region: Optional[SearchRegion] = None,
    method: Method = Method.ARGUMENT_PRINCIPLE,
    rho: float = 1.0,
) -> StabilityReport:
    """
    Decide whether all closed-loop poles lie in the lower half plane.

    Args:
        ss: Solved steady state
        params: System parameters
        region: Search rectangle; Re in [0, 5 kappa], Im in [band, 2 kappa] by default
        method: Argument-principle count or sufficient loop-gain bound
        rho: Loop-gain bound for the sufficient method, in (0, 1]

    Returns:
        StabilityReport

    Raises:
        ContourAmbiguous: if a zero lies on the argument-principle contour
    """
    method = Method(method)
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    region = region or default_region(params)
    band = marginal_band(params)
    poles = find_poles(ss, params)
    nearest = _nearest_pole(poles)

    if method is Method.ARGUMENT_PRINCIPLE:
        seeds = [pole for pole in poles if math.isfinite(abs(pole))]
        count = winding_number(ss, params, region, seeds=seeds).zeros
        if count > 0:
            verdict = Verdict.UNSTABLE
        elif abs(nearest.imag) < band:
            verdict = Verdict.MARGINAL
        else:
            verdict = Verdict.STABLE
        report = StabilityReport(verdict, count, nearest, method, region)
    else:
        count = int(np.sum(poles.imag >= band))
        gain = max_loop_gain(ss, params, region)
        if abs(nearest.imag) < band:
            verdict = Verdict.MARGINAL
        elif open_loop_stable(ss, params) and gain < rho:
            verdict = Verdict.STABLE
        else:
            verdict = Verdict.UNSTABLE
        report = StabilityReport(verdict, count, nearest, method, region, max_loop_gain=gain)

    logger.debug(
        f"{method.value}: {report.verdict.value}, {report.pole_count_upper_half} poles, "
        f"nearest {nearest:.6e}"
    )
    return report


@dataclass
class StabilityMap:
    """Verdict codes on a 2D grid; codes[i, j] belongs to (axis1[i], axis2[j])."""

    axis1: Axis
    axis2: Axis
    codes: np.ndarray
    method: Method
    errors: Dict[Tuple[int, int], str] = field(default_factory=dict)
    nearest_imag: Optional[np.ndarray] = None

    @property
    def stable(self) -> np.ndarray:
        return self.codes == MaskCode.STABLE


def _cell_verdict(
    template: SystemParams,
    axes: List[Axis],
    i: int,
    j: int,
    method: Method,
    rho: float,
) -> Tuple[int, float, Optional[str]]:
    try:
        params = apply_coordinates(
            template, [axes[0].name, axes[1].name], [axes[0].values[i], axes[1].values[j]]
        )
        ss = solve_steady_state(params)
        report = check_stability(ss, params, method=method, rho=rho)
        return int(report.code), report.nearest_pole.imag, None
    except (CFCError, ValueError, np.linalg.LinAlgError) as exc:
        logger.warning(f"Cell ({i}, {j}) undetermined: {type(exc).__name__}: {exc}")
        return int(MaskCode.UNDETERMINED), math.nan, f"{type(exc).__name__}: {exc}"


def stability_map(
    template: SystemParams,
    axis1: Axis,
    axis2: Axis,
    method: Method = Method.ARGUMENT_PRINCIPLE,
    rho: float = 1.0,
    threads: Optional[int] = None,
    show_progress: bool = True,
) -> StabilityMap:
    """
    Stability verdict for every cell of a 2D parameter grid.

    Each cell re-solves the steady state. Cell failures are recorded as
    undetermined and never reported as stable.

    Args:
        template: Parameters shared by all cells
        axis1: Row axis
        axis2: Column axis
        method: Stability method
        rho: Loop-gain bound for the sufficient method
        threads: Worker count
        show_progress: Whether to draw a progress bar

    Returns:
        StabilityMap with codes 0 stable, 1 unstable, 2 undetermined, 3 marginal
    """
    method = Method(method)
    shape = (len(axis1), len(axis2))
    axes = [axis1, axis2]

    def cell(index: int):
        i, j = unravel(index, shape)
        return _cell_verdict(template, axes, i, j, method, rho)

    results = map_cells(
        cell, shape[0] * shape[1], threads, desc="Stability map", show_progress=show_progress
    )
    codes = np.empty(shape, dtype=int)
    nearest_imag = np.empty(shape)
    errors: Dict[Tuple[int, int], str] = {}
    for index, (code, imag, error) in enumerate(results):
        i, j = unravel(index, shape)
        codes[i, j] = code
        nearest_imag[i, j] = imag
        if error is not None:
            errors[(i, j)] = error
    counts = {code.name.lower(): int(np.sum(codes == code)) for code in MaskCode}
    logger.info(f"Stability map {shape[0]}x{shape[1]} ({method.value}): {counts}")
    return StabilityMap(axis1, axis2, codes, method, errors, nearest_imag)
