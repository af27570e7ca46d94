"""
Canned reproduction runs.

Each recipe starts from a parameter template (the experimental defaults unless
the caller passes another), writes its data files into an output directory and
returns the paths together with a summary of the headline numbers.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.stats import linregress

from src.errors import CFCError
from src.fit.stages import (
    StageName,
    fit_grid,
    peak_grid,
    stage_phonons,
    synthetic_motion_spectrum,
    synthetic_spectrum,
)
from src.fit.uncertainty import AreaInputs, combine_area_ratio
from src.model.core import cooling_factor, effective_temperature, thermal_occupation
from src.model.params import SystemParams
from src.spectra.area import fit_lorentzian, phonons_from_area_ratio
from src.spectra.psd import Spectrum
from src.spectra.quadrature import IntegrationPolicy
from src.stability.checks import MaskCode, Method
from src.storage import write_heatmap, write_mask, write_spectrum, write_table
from src.sweep.axes import Axis, AxisName
from src.sweep.grid import (
    Curve,
    SweepResult,
    evaluate_point,
    excess_noise_phonons,
    scan_1d,
    sweep_2d,
    uncertainty_band,
)
from src.sweep.optimize import minimize_phonons

PI = math.pi

# Delays of the measured CFC runs, in units of pi
MEASURED_DELAYS = (0.24, 0.46, 0.79)

UPGRADE_COUPLING_FACTOR = 10.0
UPGRADE_NOISE_FACTOR = 0.1


class Recipe(str, Enum):
    DELAY_LINEWIDTH = "delay-linewidth"
    RESONANT_MAP = "resonant-map"
    DETUNED_MAP = "detuned-map"
    STAGE_SPECTRA = "stage-spectra"
    THETA_SCAN = "theta-scan"
    DETUNING_SCAN = "detuning-scan"
    DELAY_SCAN = "delay-scan"
    AREA_LINEARITY = "area-linearity"

    @classmethod
    def _missing_(cls, value):
        return RECIPE_LABELS.get(str(value).lower())


# Short labels accepted on the command line
RECIPE_LABELS: Dict[str, Recipe] = {
    "fig3a": Recipe.DELAY_LINEWIDTH,
    "fig3b": Recipe.RESONANT_MAP,
    "fig3c": Recipe.DETUNED_MAP,
    "fig4a": Recipe.STAGE_SPECTRA,
    "fig4b": Recipe.THETA_SCAN,
    "fig5a": Recipe.DETUNING_SCAN,
    "fig5b": Recipe.DELAY_SCAN,
    "figs4": Recipe.AREA_LINEARITY,
}


@dataclass
class RecipeContext:
    """Settings shared by every recipe."""

    template: SystemParams
    out_dir: Path
    integration: IntegrationPolicy = field(default_factory=IntegrationPolicy)
    method: Method = Method.ARGUMENT_PRINCIPLE
    threads: Optional[int] = None
    resolution: int = 41


@dataclass
class RecipeOutput:
    artifacts: List[Path] = field(default_factory=list)
    summary: Dict[str, object] = field(default_factory=dict)
    complete: bool = True


def ideal_loop(params: SystemParams, resonant: bool = True) -> SystemParams:
    """Lossless loop without technical noise; both modes on resonance unless told otherwise."""
    updates = dict(eta_loop=1.0, eta_f=1.0, eta_i=1.0, s_dd_h=0.0, s_dd_v=0.0)
    if resonant:
        updates.update(delta_h=0.0, delta_v=0.0)
    return params.with_updates(**updates)


def upgraded(params: SystemParams, noise_free: bool = False) -> SystemParams:
    """Couplings raised tenfold and detuning noise lowered tenfold (or removed)."""
    noise = 0.0 if noise_free else UPGRADE_NOISE_FACTOR
    return params.with_updates(
        g0_h=UPGRADE_COUPLING_FACTOR * params.g0_h,
        g0_v=UPGRADE_COUPLING_FACTOR * params.g0_v,
        s_dd_h=noise * params.s_dd_h,
        s_dd_v=noise * params.s_dd_v,
    )


def save_sweep(result: SweepResult, out_dir: Path, stem: str) -> List[Path]:
    """Heatmap and stability mask of a sweep."""
    return [
        write_heatmap(result.n_bar, result.axis1, result.axis2, out_dir / f"{stem}_nbar.csv"),
        write_mask(result.mask, result.axis1, result.axis2, out_dir / f"{stem}_mask.csv"),
    ]


def _curve_complete(curve: Curve) -> bool:
    return not np.any(curve.mask == MaskCode.UNDETERMINED)


def _delay_gamma_sweep(ctx: RecipeContext, template: SystemParams, stem: str) -> RecipeOutput:
    delays = Axis.linspace(AxisName.OMEGA_M_TAU, 0.02 * PI, PI, ctx.resolution)
    angles = Axis.linspace(AxisName.GAMMA, -1.5 * PI, 0.5 * PI, ctx.resolution)
    result = sweep_2d(template, delays, angles, ctx.integration, ctx.method, ctx.threads)
    output = RecipeOutput(save_sweep(result, ctx.out_dir, stem), complete=result.complete)
    if np.any(np.isfinite(result.n_bar)):
        tau_best, gamma_best, n_best = result.argmin()
        output.summary.update(
            argmin_omega_m_tau_over_pi=tau_best / PI,
            argmin_gamma_over_pi=gamma_best / PI,
            n_bar_min=n_best,
            flat_cells=int(np.sum(result.n_bar <= 1.1 * n_best)),
        )
    output.summary["stable_fraction"] = float(np.mean(result.mask == MaskCode.STABLE))
    return output


def delay_linewidth_map(ctx: RecipeContext) -> RecipeOutput:
    """Phonon number over delay and linewidth at gamma = -pi/2; per-linewidth optimal delay."""
    template = ideal_loop(ctx.template).with_updates(gamma=-0.5 * PI)
    delays = Axis.linspace(AxisName.OMEGA_M_TAU, 0.02 * PI, PI, ctx.resolution)
    kappas = Axis(
        name=AxisName.KAPPA,
        values=np.geomspace(0.3 * template.omega_m, 30.0 * template.omega_m, ctx.resolution).tolist(),
    )
    result = sweep_2d(template, delays, kappas, ctx.integration, ctx.method, ctx.threads)
    output = RecipeOutput(save_sweep(result, ctx.out_dir, "delay_linewidth"), complete=result.complete)

    optimal = np.full(len(kappas), math.nan)
    n_min = np.full(len(kappas), math.inf)
    for j in range(len(kappas)):
        column = result.n_bar[:, j]
        if np.any(np.isfinite(column)):
            best = int(np.argmin(column))
            optimal[j] = delays.values[best]
            n_min[j] = column[best]
    output.artifacts.append(
        write_table(
            {
                "kappa_over_omega_m": np.asarray(kappas.values) / template.omega_m,
                "optimal_omega_m_tau": optimal,
                "n_bar_min": n_min,
            },
            ctx.out_dir / "delay_linewidth_optimal_delay.csv",
        )
    )
    if np.isfinite(optimal[-1]):
        output.summary["optimal_omega_m_tau_over_pi_at_max_kappa"] = optimal[-1] / PI
    return output


def resonant_map(ctx: RecipeContext) -> RecipeOutput:
    """Delay-angle map with both modes on resonance and a lossless, noise-free loop."""
    return _delay_gamma_sweep(ctx, ideal_loop(ctx.template), "resonant_map")


def detuned_map(ctx: RecipeContext) -> RecipeOutput:
    """Delay-angle map at the experimental detunings, lossless and noise-free."""
    return _delay_gamma_sweep(ctx, ideal_loop(ctx.template, resonant=False), "detuned_map")


def _area_ratio(
    calibration: Spectrum, detected: Spectrum, n_calib: float
) -> Tuple[float, float]:
    calib_fit = fit_lorentzian(calibration)
    detected_fit = fit_lorentzian(detected)
    ratio = combine_area_ratio(
        n_calib,
        0.0,
        AreaInputs(calib_fit.area, calib_fit.area_error, detected_fit.area, detected_fit.area_error),
    )
    return phonons_from_area_ratio(n_calib, calib_fit.area, detected_fit.area), ratio.sigma


def stage_spectra(ctx: RecipeContext) -> RecipeOutput:
    """
    Model spectra of the three measurement configurations and the area-ratio thermometry.

    DBC2 is the calibration: its phonon number from the quadrature scales the
    Lorentzian-area ratio of the CFC motional spectrum. The same ratio taken on
    the full in-loop spectra is reported alongside; squashing makes it read low.
    """
    template = ctx.template
    grid = fit_grid(template)
    output = RecipeOutput()
    spectra, motion = {}, {}
    for stage in StageName:
        spectra[stage] = synthetic_spectrum(template, stage, grid)
        motion[stage] = synthetic_motion_spectrum(template, stage, peak_grid(template, stage))
        output.artifacts.append(
            write_spectrum(spectra[stage], ctx.out_dir / f"stage_spectrum_{stage.value}.csv")
        )
        output.artifacts.append(
            write_spectrum(motion[stage], ctx.out_dir / f"stage_motion_{stage.value}.csv")
        )
        output.summary[f"n_bar_{stage.value}"] = stage_phonons(template, stage, ctx.integration)

    n_calib = output.summary[f"n_bar_{StageName.DBC2.value}"]
    n_ratio, n_ratio_sigma = _area_ratio(motion[StageName.DBC2], motion[StageName.CFC], n_calib)
    n_in_loop, _ = _area_ratio(spectra[StageName.DBC2], spectra[StageName.CFC], n_calib)
    output.summary.update(
        n_bar_area_ratio=n_ratio,
        n_bar_area_ratio_sigma=n_ratio_sigma,
        n_bar_area_ratio_in_loop=n_in_loop,
        excess_noise_phonons_dbc=excess_noise_phonons(
            template.with_updates(eta_loop=0.0), ctx.integration
        ),
    )
    n_cfc = output.summary[f"n_bar_{StageName.CFC.value}"]
    n_bar_in = thermal_occupation(template.bath_temperature, template.omega_m)
    output.summary.update(
        n_bar_in=n_bar_in,
        cooling_factor=cooling_factor(n_bar_in, n_cfc),
        effective_temperature_k=effective_temperature(n_cfc, template.omega_m),
    )
    return output


def _band_table(band, extra: Optional[Dict[str, np.ndarray]] = None) -> Dict[str, np.ndarray]:
    columns = {
        band.nominal.axis.name.value: np.asarray(band.nominal.axis.values),
        "n_bar": band.nominal.n_bar,
        "lower": band.lower,
        "upper": band.upper,
    }
    columns.update(extra or {})
    return columns


def theta_scan(ctx: RecipeContext) -> RecipeOutput:
    """Phonon number versus the interference angle theta with a +/-10% band on eta and tau."""
    values = np.linspace(-PI, PI, ctx.resolution).tolist()
    axis = Axis(name=AxisName.THETA, values=values)

    def curve(params: SystemParams) -> Curve:
        return scan_1d(params, axis, "theta", ctx.integration, ctx.method, ctx.threads)

    band = uncertainty_band(ctx.template, curve, ["eta_loop", "tau"])
    output = RecipeOutput(
        [write_table(_band_table(band), ctx.out_dir / "theta_scan.csv")],
        complete=_curve_complete(band.nominal),
    )
    if np.any(np.isfinite(band.nominal.n_bar)):
        theta_best, n_best = band.nominal.argmin()
        output.summary.update(argmin_theta_over_pi=theta_best / PI, n_bar_min=n_best)
    return output


def detuning_comparison(ctx: RecipeContext) -> RecipeOutput:
    """DBC-only and CFC phonon numbers versus probe detuning; band on the CFC curve."""
    ratios = np.linspace(-0.6, -0.02, ctx.resolution).tolist()
    axis = Axis(name=AxisName.DELTA_H_OVER_KAPPA, values=ratios)
    dbc = scan_1d(ctx.template.with_updates(eta_loop=0.0), axis, "dbc", ctx.integration, ctx.method, ctx.threads)

    def cfc_curve(params: SystemParams) -> Curve:
        return scan_1d(params, axis, "cfc", ctx.integration, ctx.method, ctx.threads)

    band = uncertainty_band(ctx.template, cfc_curve, ["eta_loop", "tau"])
    output = RecipeOutput(
        [write_table(_band_table(band, {"n_bar_dbc": dbc.n_bar}), ctx.out_dir / "detuning_scan.csv")],
        complete=_curve_complete(dbc) and _curve_complete(band.nominal),
    )
    if np.any(np.isfinite(dbc.n_bar)):
        where, best = dbc.argmin()
        output.summary.update(dbc_argmin_delta_h_over_kappa=where, dbc_n_bar_min=best)
    point = evaluate_point(ctx.template.with_updates(delta_h=-0.21 * ctx.template.kappa), ctx.integration, ctx.method)
    output.summary["cfc_n_bar_at_-0.21"] = point.n_bar
    return output


def delay_projection(ctx: RecipeContext) -> RecipeOutput:
    """
    Phonon number versus delay with a band on Delta_h and eta, plus projections.

    The projections raise both couplings tenfold and divide the detuning noise by
    ten, or remove it, and minimize over delay and displacement angle.
    """
    axis = Axis.linspace(AxisName.OMEGA_M_TAU, 0.02 * PI, PI, ctx.resolution)

    def curve(params: SystemParams) -> Curve:
        return scan_1d(params, axis, "delay", ctx.integration, ctx.method, ctx.threads)

    band = uncertainty_band(ctx.template, curve, ["delta_h", "eta_loop"])
    projections = {
        "upgraded": upgraded(ctx.template),
        "upgraded_noise_free": upgraded(ctx.template, noise_free=True),
    }
    extra = {name: curve(params).n_bar for name, params in projections.items()}
    output = RecipeOutput(
        [write_table(_band_table(band, extra), ctx.out_dir / "delay_scan.csv")],
        complete=_curve_complete(band.nominal),
    )

    for delay in MEASURED_DELAYS:
        point = evaluate_point(ctx.template.with_updates(tau=delay * PI / ctx.template.omega_m), ctx.integration, ctx.method)
        output.summary[f"n_bar_at_{delay}pi"] = point.n_bar
    noise_free = evaluate_point(ctx.template.with_updates(s_dd_h=0.0, s_dd_v=0.0), ctx.integration, ctx.method)
    output.summary["n_bar_noise_free"] = noise_free.n_bar

    bounds = [(0.02 * PI, PI), (-1.5 * PI, 0.5 * PI)]
    for name, params in projections.items():
        try:
            report = minimize_phonons(
                params,
                [AxisName.OMEGA_M_TAU, AxisName.GAMMA],
                bounds,
                integration=ctx.integration,
                method=ctx.method,
                threads=ctx.threads,
            )
        except CFCError as exc:
            logger.warning(f"Projection '{name}' failed: {exc}")
            output.complete = False
            continue
        output.summary[f"{name}_n_bar_min"] = report.n_bar_min
        output.summary[f"{name}_optimum"] = report.to_dict()
    return output


def area_linearity(ctx: RecipeContext) -> RecipeOutput:
    """Linearity of the integrated phonon number in the motional peak area over a gamma sweep."""
    gammas = np.linspace(-PI, -0.3 * PI, max(ctx.resolution // 3, 5))
    n_bars, areas = [], []
    for gamma in gammas:
        params = ctx.template.with_updates(gamma=float(gamma))
        outcome = evaluate_point(params, ctx.integration, ctx.method)
        area = math.nan
        if outcome.code == MaskCode.STABLE:
            try:
                grid = peak_grid(params, StageName.CFC)
                spectrum = synthetic_motion_spectrum(params, StageName.CFC, grid)
                area = fit_lorentzian(spectrum).area
            except CFCError as exc:
                logger.warning(f"gamma={gamma:.4f}: no Lorentzian area ({exc})")
        n_bars.append(outcome.n_bar)
        areas.append(area)

    n_bars, areas = np.array(n_bars), np.array(areas)
    output = RecipeOutput(
        [
            write_table(
                {"gamma": gammas, "n_bar": n_bars, "lorentzian_area": areas},
                ctx.out_dir / "area_linearity.csv",
            )
        ]
    )
    usable = np.isfinite(n_bars) & np.isfinite(areas)
    if np.count_nonzero(usable) >= 3:
        fit = linregress(areas[usable], n_bars[usable])
        output.summary.update(r_squared=fit.rvalue**2, slope=fit.slope, intercept=fit.intercept)
    else:
        output.complete = False
    output.summary["points_used"] = int(np.count_nonzero(usable))
    return output


RECIPES: Dict[Recipe, Callable[[RecipeContext], RecipeOutput]] = {
    Recipe.DELAY_LINEWIDTH: delay_linewidth_map,
    Recipe.RESONANT_MAP: resonant_map,
    Recipe.DETUNED_MAP: detuned_map,
    Recipe.STAGE_SPECTRA: stage_spectra,
    Recipe.THETA_SCAN: theta_scan,
    Recipe.DETUNING_SCAN: detuning_comparison,
    Recipe.DELAY_SCAN: delay_projection,
    Recipe.AREA_LINEARITY: area_linearity,
}


def run_recipe(recipe: Recipe, ctx: RecipeContext) -> RecipeOutput:
    """Run one recipe and log its summary."""
    recipe = Recipe(recipe)
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Reproducing {recipe.value} into {ctx.out_dir}")
    output = RECIPES[recipe](ctx)
    for key, value in output.summary.items():
        if isinstance(value, float):
            logger.info(f"{recipe.value}: {key} = {value:.6g}")
    return output
