"""
Constrained minimization of the phonon number.

A coarse product-grid pre-scan seeds a bounded Powell refinement. Unstable or
failed points return a large finite penalty so the optimizer stays in the
stable region.
"""

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import minimize

from src.errors import NoStableRegion
from src.model.params import SystemParams
from src.spectra.quadrature import IntegrationPolicy
from src.stability.checks import MaskCode, Method
from src.sweep.axes import AxisName, apply_coordinates
from src.sweep.grid import evaluate_point
from src.sweep.pool import map_cells

UNSTABLE_PENALTY = 1e30
FLATNESS_FACTOR = 1.1
# Relative spread of the pre-scan below which the objective counts as flat
ZERO_SENSITIVITY_TOL = 1e-9


@dataclass
class OptimumReport:
    coordinates: Dict[str, float]
    n_bar_min: float
    flatness_radius: Dict[str, float]
    zero_sensitivity: bool
    evaluations: int
    seed: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "coordinates": self.coordinates,
            "n_bar_min": self.n_bar_min,
            "flatness_radius": self.flatness_radius,
            "zero_sensitivity": self.zero_sensitivity,
            "evaluations": self.evaluations,
            "seed": self.seed,
        }


class _Objective:
    def __init__(
        self,
        template: SystemParams,
        names: List[AxisName],
        integration: IntegrationPolicy,
        method: Method,
        stability_constrained: bool,
    ):
        self.template = template
        self.names = names
        self.integration = integration
        self.method = method
        self.stability_constrained = stability_constrained
        self.evaluations = 0

    def n_bar(self, point: Sequence[float]) -> float:
        try:
            params = apply_coordinates(self.template, self.names, list(point))
        except ValueError:
            return math.inf
        outcome = evaluate_point(
            params, self.integration, self.method, stability_checked=self.stability_constrained
        )
        return outcome.n_bar if outcome.code == MaskCode.STABLE else math.inf

    def counted(self, point: Sequence[float]) -> float:
        # Serial callers only; the pre-scan adds its count after the pool joins
        self.evaluations += 1
        return self.n_bar(point)

    def __call__(self, point: np.ndarray) -> float:
        value = self.counted(point)
        return value if math.isfinite(value) else UNSTABLE_PENALTY


def _coarse_points(bounds: Sequence[Tuple[float, float]], per_axis: int) -> List[Tuple[float, ...]]:
    grids = [np.linspace(lo, hi, per_axis) for lo, hi in bounds]
    return list(itertools.product(*grids))


def _flat_radius(
    objective: _Objective,
    best: np.ndarray,
    axis: int,
    bounds: Tuple[float, float],
    threshold: float,
    bisections: int = 12,
) -> float:
    # Shortest distance along one coordinate at which n_bar exceeds the threshold
    radii = []
    lo, hi = bounds
    for direction in (-1.0, 1.0):
        limit = (best[axis] - lo) if direction < 0 else (hi - best[axis])
        if limit <= 0:
            radii.append(0.0)
            continue
        probe = best.copy()
        probe[axis] = best[axis] + direction * limit
        if objective.counted(probe) <= threshold:
            radii.append(limit)
            continue
        inside, outside = 0.0, limit
        for _ in range(bisections):
            middle = 0.5 * (inside + outside)
            probe[axis] = best[axis] + direction * middle
            if objective.counted(probe) <= threshold:
                inside = middle
            else:
                outside = middle
        radii.append(inside)
    return min(radii)


def minimize_phonons(
    template: SystemParams,
    free: Sequence[AxisName],
    bounds: Sequence[Tuple[float, float]],
    stability_constrained: bool = True,
    coarse_per_axis: Optional[int] = None,
    integration: IntegrationPolicy = IntegrationPolicy(),
    method: Method = Method.ARGUMENT_PRINCIPLE,
    threads: Optional[int] = None,
) -> OptimumReport:
    """
    Minimize n_bar over the free axes inside finite bounds.

    Args:
        template: Parameters held fixed
        free: Axes to optimize, in axis units
        bounds: (lo, hi) per free axis
        stability_constrained: Reject unstable points when True
        coarse_per_axis: Pre-scan resolution; chosen from the number of axes when omitted
        integration: Quadrature policy
        method: Stability method
        threads: Worker count for the pre-scan

    Returns:
        OptimumReport with the argmin, n_bar_min and per-axis flatness radii

    Raises:
        NoStableRegion: if no pre-scan point is stable
    """
    names = [AxisName(name) for name in free]
    if len(names) != len(bounds) or not names:
        raise ValueError("Provide one (lo, hi) bound per free axis")
    for lo, hi in bounds:
        if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
            raise ValueError(f"Bounds must be finite with hi > lo, got ({lo}, {hi})")
    if coarse_per_axis is None:
        coarse_per_axis = {1: 21, 2: 9}.get(len(names), 5)

    objective = _Objective(template, names, integration, method, stability_constrained)
    points = _coarse_points(bounds, coarse_per_axis)
    values = np.array(
        map_cells(lambda index: objective.n_bar(points[index]), len(points), threads, "Pre-scan")
    )
    objective.evaluations += len(points)
    stable = np.isfinite(values)
    if not np.any(stable):
        logger.error(f"No stable point among {len(points)} pre-scan points")
        raise NoStableRegion(f"No stable point found in bounds {list(bounds)}")

    seed = np.array(points[int(np.argmin(np.where(stable, values, np.inf)))])
    seed_value = float(np.min(values[stable]))
    labels = [name.value for name in names]
    spread = float(np.max(values[stable]) - np.min(values[stable]))
    if spread <= ZERO_SENSITIVITY_TOL * abs(seed_value):
        logger.info(f"Objective is flat over the bounds of {labels}")
        return OptimumReport(
            coordinates=dict(zip(labels, seed.tolist())),
            n_bar_min=seed_value,
            flatness_radius={label: hi - lo for label, (lo, hi) in zip(labels, bounds)},
            zero_sensitivity=True,
            evaluations=objective.evaluations,
            seed=dict(zip(labels, seed.tolist())),
        )

    steps = np.array([(hi - lo) / (coarse_per_axis - 1) for lo, hi in bounds])
    result = minimize(
        objective,
        seed,
        method="Powell",
        bounds=list(bounds),
        options={"xtol": 1e-4, "ftol": 1e-4, "direc": np.diag(steps), "maxfev": 2000},
    )
    best, best_value = seed, seed_value
    if result.fun < seed_value and math.isfinite(objective.counted(result.x)):
        best, best_value = np.asarray(result.x, dtype=float), float(result.fun)

    threshold = FLATNESS_FACTOR * best_value
    radius = {
        label: _flat_radius(objective, best, axis, bounds[axis], threshold)
        for axis, label in enumerate(labels)
    }
    logger.info(
        f"Minimum n_bar={best_value:.4g} at {dict(zip(labels, np.round(best, 6).tolist()))} "
        f"({objective.evaluations} evaluations)"
    )
    return OptimumReport(
        coordinates=dict(zip(labels, best.tolist())),
        n_bar_min=best_value,
        flatness_radius=radius,
        zero_sensitivity=False,
        evaluations=objective.evaluations,
        seed=dict(zip(labels, seed.tolist())),
    )
