"""
Counting unstable poles with the argument principle.

Poles of the closed-loop response are the zeros of the characteristic function
D(w) = det(A(w) + iwI), which is entire in w because the delay enters only as
e^{iw tau}. With the e^{-iwt} time dependence a zero with Im w > 0 grows, so the
number of zeros inside an upper-half-plane rectangle is the winding number of D
along the rectangle boundary.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ContourAmbiguous
from src.model.core import SteadyState, delay_split
from src.model.params import SystemParams
from src.spectra.transfer import system_matrix_stack

# Relative marginality band |Im w_p| < MARGIN_FRACTION * Gamma_m
MARGIN_FRACTION = 1e-3

# Phase steps above this are bisected
MAX_PHASE_STEP = math.pi / 3

# Accepted distance of the winding number from an integer
WINDING_TOLERANCE = 0.1


class SearchRegion(BaseModel):
    """Axis-aligned rectangle in the complex frequency plane, rad/s."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    re_min: float = Field(description="Left edge, rad/s")
    re_max: float = Field(description="Right edge, rad/s")
    im_min: float = Field(description="Bottom edge, rad/s")
    im_max: float = Field(description="Top edge, rad/s")

    @model_validator(mode="after")
    def _ordered(self) -> "SearchRegion":
        if not (self.re_max > self.re_min and self.im_max > self.im_min):
            raise ValueError("Search region edges must satisfy re_max > re_min and im_max > im_min")
        return self

    def corners(self) -> List[complex]:
        """Counterclockwise corners starting at the bottom left."""
        return [
            complex(self.re_min, self.im_min),
            complex(self.re_max, self.im_min),
            complex(self.re_max, self.im_max),
            complex(self.re_min, self.im_max),
        ]

    def contains(self, omega: complex) -> bool:
        return self.re_min < omega.real < self.re_max and self.im_min < omega.imag < self.im_max


def marginal_band(params: SystemParams) -> float:
    return MARGIN_FRACTION * params.gamma_m


def default_region(params: SystemParams) -> SearchRegion:
    """
    Re w in [0, 5 kappa], Im w in [band, 2 kappa].

    The left edge sits a little below zero so purely imaginary roots are not on
    the contour, and the bottom edge is lifted by the marginality band.
    """
    return SearchRegion(
        re_min=-1e-3 * params.kappa,
        re_max=5.0 * params.kappa,
        im_min=marginal_band(params),
        im_max=2.0 * params.kappa,
    )


@dataclass(frozen=True)
class WindingResult:
    winding: float
    zeros: int
    evaluations: int


def characteristic_phase(
    ss: SteadyState, params: SystemParams, omegas: np.ndarray
) -> np.ndarray:
    """Arg det(A(w) + iwI) for complex frequencies, via slogdet."""
    sign, _ = np.linalg.slogdet(system_matrix_stack(ss, params, omegas))
    return np.angle(sign)


def _edge_points(start: complex, stop: complex, n_points: int, seeds: Sequence[complex]) -> np.ndarray:
    # Parameter along the edge in [0, 1], seeded with projections of nearby poles
    t = list(np.linspace(0.0, 1.0, n_points))
    direction = stop - start
    length2 = abs(direction) ** 2
    for seed in seeds:
        s = ((seed - start) * direction.conjugate()).real / length2
        if 0.0 < s < 1.0:
            t.append(s)
    return np.unique(np.array(t))


def _refine_edge(
    ss: SteadyState,
    params: SystemParams,
    start: complex,
    stop: complex,
    t: np.ndarray,
    min_length: float,
    max_points: int,
) -> tuple:
    direction = stop - start
    points = start + t * direction
    phases = characteristic_phase(ss, params, points)
    evaluations = points.size
    edge_length = abs(direction)

    while True:
        steps = np.angle(np.exp(1j * np.diff(phases)))
        coarse = np.abs(steps) > MAX_PHASE_STEP
        if not np.any(coarse):
            return float(np.sum(steps)), evaluations
        widths = np.diff(t) * edge_length
        if np.any(widths[coarse] < min_length):
            where = points[:-1][coarse & (widths < min_length)][0]
            logger.error(f"Characteristic function has a zero on the contour near {where}")
            raise ContourAmbiguous(
                f"A zero lies within {min_length:.3e} rad/s of the contour near {where}; "
                "perturb the search region"
            )
        if t.size > max_points:
            logger.error(f"Contour refinement exceeded {max_points} points on one edge")
            raise ContourAmbiguous("Contour refinement budget exhausted")
        midpoints = 0.5 * (t[:-1][coarse] + t[1:][coarse])
        new_points = start + midpoints * direction
        new_phases = characteristic_phase(ss, params, new_points)
        evaluations += new_points.size
        order = np.argsort(np.concatenate([t, midpoints]), kind="stable")
        t = np.concatenate([t, midpoints])[order]
        points = np.concatenate([points, new_points])[order]
        phases = np.concatenate([phases, new_phases])[order]


def winding_number(
    ss: SteadyState,
    params: SystemParams,
    region: SearchRegion,
    seeds: Sequence[complex] = (),
    points_per_edge: int = 65,
    max_points: int = 200_000,
) -> WindingResult:
    """
    Count zeros of det(A(w) + iwI) inside ``region``.

    Each edge starts from a uniform sample plus the projections of ``seeds``
    (known pole locations) and is bisected wherever the phase step between
    neighbours exceeds pi/3.

    Args:
        ss: Solved steady state
        params: System parameters
        region: Rectangle to enclose
        seeds: Approximate zeros used to place initial samples
        points_per_edge: Initial uniform samples per edge
        max_points: Refinement budget per edge

    Returns:
        WindingResult with the raw winding and the rounded zero count

    Raises:
        ContourAmbiguous: if a zero sits on the contour or the winding is not an integer
    """
    min_length = 0.1 * marginal_band(params)
    corners = region.corners()
    total = 0.0
    evaluations = 0
    for index, start in enumerate(corners):
        stop = corners[(index + 1) % len(corners)]
        t = _edge_points(start, stop, points_per_edge, seeds)
        change, count = _refine_edge(ss, params, start, stop, t, min_length, max_points)
        total += change
        evaluations += count

    winding = total / (2.0 * math.pi)
    zeros = int(round(winding))
    if abs(winding - zeros) > WINDING_TOLERANCE:
        logger.error(f"Non-integer winding number {winding:.4f}")
        raise ContourAmbiguous(f"Winding number {winding:.4f} is not close to an integer")
    logger.debug(f"Winding {winding:.6f} -> {zeros} zeros ({evaluations} evaluations)")
    return WindingResult(winding=winding, zeros=zeros, evaluations=evaluations)


def loop_gain(ss: SteadyState, params: SystemParams, omega) -> np.ndarray:
    """
    det(A(w) + iwI) / det(A0 + iwI) - 1 with A0 the drift matrix without feedback.

    Evaluated as det(I + e^{iw tau} (A0 + iwI)^{-1} A_delayed) - 1.

    Args:
        ss: Solved steady state
        params: System parameters
        omega: Frequency or array of frequencies, rad/s

    Returns:
        Complex loop gain with the shape of ``omega``
    """
    omegas = np.atleast_1d(np.asarray(omega, dtype=complex))
    a_now, a_delayed = delay_split(ss, params)
    open_loop = a_now[None, :, :] + 1j * omegas[:, None, None] * np.eye(6)[None, :, :]
    delayed = np.exp(1j * omegas * params.tau)[:, None, None] * a_delayed[None, :, :]
    correction = np.linalg.solve(open_loop, delayed)
    values = np.linalg.det(np.eye(6)[None, :, :] + correction) - 1.0
    return values[0] if np.ndim(omega) == 0 else values


def open_loop_stable(ss: SteadyState, params: SystemParams) -> bool:
    """Whether the feedback-free drift matrix has all poles in the lower half plane."""
    a_now, _ = delay_split(ss, params)
    return bool(np.all(np.linalg.eigvals(a_now).real < 0.0))
