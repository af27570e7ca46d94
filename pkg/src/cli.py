"""
Command-line front end.

    python -m src.cli simulate --config run.json --out results/sim
    python -m src.cli sweep --config run.json --out results/sweep --threads 8
    python -m src.cli stability --config run.json --out results/stab --method sufficient-bound
    python -m src.cli fit --config run.json --out results/fit
    python -m src.cli reproduce resonant-map --out results/resonant-map
    python -m src.cli defaults --out results/defaults

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O failure.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger
from termcolor import colored

from src.config import default_threads, save_logs, set_debug
from src.errors import CFCError
from src.fit.stages import fit_chain
from src.model.core import (
    effective_temperature,
    solve_steady_state,
    thermal_noise_model,
    thermal_occupation,
)
from src.recipes import RECIPE_LABELS, Recipe, RecipeContext, run_recipe, save_sweep
from src.run_config import RunConfig, default_config, load_config, save_config
from src.spectra.psd import detected_spectrum, linear_window_grid, qq_spectrum
from src.spectra.quadrature import IntegrationPolicy, phonon_occupation
from src.stability.checks import MaskCode, Method, check_stability, stability_map
from src.storage import read_spectrum, write_error, write_json, write_manifest, write_mask, write_spectrum
from src.sweep.grid import sweep_2d

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class RunState:
    """Artifacts, summary and completeness of one command run."""

    def __init__(self, command: str, out_dir: Path):
        self.command = command
        self.out_dir = out_dir
        self.artifacts: List[Path] = []
        self.summary: dict = {}
        self.complete = True


def _integration(config: RunConfig, tolerance: Optional[float]) -> IntegrationPolicy:
    if tolerance is None:
        return config.integration
    return IntegrationPolicy.model_validate({**config.integration.model_dump(), "rel_tol": tolerance})


def _method(config: RunConfig, args: argparse.Namespace) -> Method:
    return Method(args.method) if args.method else config.stability.method


def _print_verdict(verdict: str) -> None:
    color = "green" if verdict == "stable" else "red"
    print(f"Stability: {colored(verdict, color)}")


def _print_value(label: str, value: float) -> None:
    print(f"{label}: {colored(f'{value:.6g}', 'cyan')}")


def run_simulate(config: RunConfig, args: argparse.Namespace, run: RunState) -> None:
    params = config.params
    if config.simulate.feedback_blocked:
        params = params.with_updates(eta_loop=0.0)
    ss = solve_steady_state(params)
    report = check_stability(
        ss, params, region=config.stability.region, method=_method(config, args), rho=config.stability.rho
    )
    _print_verdict(report.verdict.value)
    run.summary["stability"] = report.to_dict()

    grid = linear_window_grid(params.omega_m, config.simulate.halfwidth, config.simulate.n_points)
    noise = thermal_noise_model(params)
    run.artifacts.append(write_spectrum(detected_spectrum(ss, params, noise, grid), run.out_dir / "S_Ydet.csv"))
    run.artifacts.append(write_spectrum(qq_spectrum(ss, params, noise, grid), run.out_dir / "S_QQ.csv"))

    n_bar_in = thermal_occupation(params.bath_temperature, params.omega_m)
    run.summary["n_bar_in"] = n_bar_in
    if report.code != MaskCode.STABLE:
        logger.warning(f"Configuration is {report.verdict.value}; phonon number not computed")
        run.summary["n_bar"] = None
        return
    estimate = phonon_occupation(ss, params, noise, _integration(config, args.tolerance))
    run.summary.update(
        n_bar=estimate.n_bar,
        n_bar_error=estimate.error,
        effective_temperature_k=effective_temperature(estimate.n_bar, params.omega_m),
        gamma_angle=ss.gamma_angle,
    )
    _print_value("Phonon occupation", estimate.n_bar)


def run_sweep(config: RunConfig, args: argparse.Namespace, run: RunState) -> None:
    if config.sweep is None:
        raise ValueError("The sweep command needs a 'sweep' block in the config")
    result = sweep_2d(
        config.params,
        config.sweep.axis1.to_axis(),
        config.sweep.axis2.to_axis(),
        _integration(config, args.tolerance),
        _method(config, args),
        args.threads,
    )
    run.artifacts.extend(save_sweep(result, run.out_dir, "sweep"))
    run.complete = result.complete
    run.summary.update(result.meta)
    run.summary["undetermined_cells"] = {f"{i},{j}": error for (i, j), error in result.errors.items()}
    if np.any(result.mask == MaskCode.STABLE):
        a, b, best = result.argmin()
        run.summary.update(argmin=[a, b], n_bar_min=best)
        _print_value("Sweep minimum", best)


def run_stability(config: RunConfig, args: argparse.Namespace, run: RunState) -> None:
    block = config.stability
    method = _method(config, args)
    if block.axis1 is not None:
        result = stability_map(config.params, block.axis1.to_axis(), block.axis2.to_axis(), method, block.rho, args.threads)
        run.artifacts.append(write_mask(result.codes, result.axis1, result.axis2, run.out_dir / "stability_mask.csv"))
        run.complete = not np.any(result.codes == MaskCode.UNDETERMINED)
        run.summary["counts"] = {code.name.lower(): int(np.sum(result.codes == code)) for code in MaskCode}
        return
    ss = solve_steady_state(config.params)
    report = check_stability(ss, config.params, region=block.region, method=method, rho=block.rho)
    _print_verdict(report.verdict.value)
    run.artifacts.append(write_json(report.to_dict(), run.out_dir / "stability_report.json"))
    run.summary["verdict"] = report.verdict.value


def run_fit(config: RunConfig, args: argparse.Namespace, run: RunState) -> None:
    if config.fit is None:
        raise ValueError("The fit command needs a 'fit' block in the config")
    spectra = {stage: read_spectrum(Path(path)) for stage, path in config.fit.data.items()}
    results = fit_chain(spectra, config.params, config.fit.stages, _integration(config, args.tolerance))
    report = {
        "stages": [result.to_dict() for result in results],
        "final_params": results[-1].params.model_dump(mode="json"),
    }
    run.artifacts.append(write_json(report, run.out_dir / "fit_report.json"))
    for result in results:
        _print_value(f"{result.stage.value} n_bar", result.n_bar)
        run.summary[f"n_bar_{result.stage.value}"] = [result.n_bar, result.n_bar_sigma]


def run_reproduce(config: RunConfig, args: argparse.Namespace, run: RunState) -> None:
    context = RecipeContext(
        template=config.params,
        out_dir=run.out_dir,
        integration=_integration(config, args.tolerance),
        method=_method(config, args),
        threads=args.threads,
        resolution=args.resolution,
    )
    output = run_recipe(Recipe(args.recipe), context)
    run.artifacts.extend(output.artifacts)
    run.summary.update(output.summary)
    run.complete = output.complete


def run_defaults(config: RunConfig, args: argparse.Namespace, run: RunState) -> None:
    path = run.out_dir / "config.json"
    save_config(config, path)
    run.artifacts.append(path)


COMMANDS = {
    "simulate": run_simulate,
    "sweep": run_sweep,
    "stability": run_stability,
    "fit": run_fit,
    "reproduce": run_reproduce,
    "defaults": run_defaults,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Run configuration (JSON); defaults when omitted")
    common.add_argument("--out", type=Path, required=True, help="Output directory")
    common.add_argument("--threads", type=int, default=None, help="Worker threads (default: CFC_THREADS or CPU count)")
    common.add_argument("--tolerance", type=float, default=None, help="Relative tolerance of the phonon quadrature")
    common.add_argument(
        "--method",
        choices=[method.value for method in Method],
        default=None,
        help="Stability method (default: from config)",
    )
    common.add_argument("--debug", action="store_true", help="Verbose logging")
    common.add_argument("--save-logs", action="store_true", help="Write logs to file instead of the console")

    parser = argparse.ArgumentParser(
        prog="cfc-sim",
        description="Coherent feedback and dynamical backaction cooling simulator",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("simulate", parents=[common], help="Spectra and n_bar for one configuration")
    subparsers.add_parser("sweep", parents=[common], help="2D phonon-number heatmap with stability mask")
    subparsers.add_parser("stability", parents=[common], help="Stability report for one point or a map")
    subparsers.add_parser("fit", parents=[common], help="Staged fit of measured spectra")
    subparsers.add_parser("defaults", parents=[common], help="Write the default configuration")
    reproduce = subparsers.add_parser("reproduce", parents=[common], help="Run a canned reproduction recipe")
    reproduce.add_argument(
        "recipe",
        type=str.lower,
        choices=[recipe.value for recipe in Recipe] + list(RECIPE_LABELS),
        help="Recipe name or its short label",
    )
    reproduce.add_argument("--resolution", type=int, default=41, help="Points per sweep axis")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    set_debug(args.debug)
    save_logs(args.save_logs)
    if args.threads is None:
        args.threads = default_threads()

    try:
        config = load_config(args.config) if args.config is not None else default_config()
        if args.threads < 1 or (args.tolerance is not None and args.tolerance <= 0):
            raise ValueError("--threads must be >= 1 and --tolerance > 0")
    except ValueError as exc:
        # pydantic.ValidationError is a ValueError; nothing is written for invalid input
        logger.error(f"Invalid configuration: {exc}")
        return EXIT_VALIDATION
    except OSError as exc:
        logger.error(f"Cannot read configuration: {exc}")
        return EXIT_IO

    run = RunState(args.command, args.out)
    try:
        run.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](config, args, run)
        write_manifest(run.out_dir, run.command, config.model_dump(mode="json"), run.artifacts, run.complete, run.summary)
    except ValueError as exc:
        logger.error(f"{args.command} failed: {exc}")
        write_error(run.out_dir, run.command, exc)
        return EXIT_VALIDATION
    except CFCError as exc:
        logger.error(f"{args.command} failed: {type(exc).__name__}: {exc}")
        write_error(run.out_dir, run.command, exc)
        # Keep whatever was produced, flagged as incomplete
        if run.artifacts:
            write_manifest(run.out_dir, run.command, config.model_dump(mode="json"), run.artifacts, False, run.summary)
        return EXIT_NUMERICAL
    except OSError as exc:
        logger.error(f"{args.command} failed: {exc}")
        write_error(run.out_dir, run.command, exc)
        return EXIT_IO

    status = colored("complete", "green") if run.complete else colored("incomplete", "yellow")
    print(f"{args.command} {status}: {len(run.artifacts)} artifacts in {run.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
