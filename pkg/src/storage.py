"""
Reading and writing run artifacts.

Data files are comma-delimited text written with pandas at 15 significant
digits, so repeated runs produce identical bytes. Spectra are stored against
ordinary frequency in Hz: two-sided absolute PSDs are multiplied by the 2pi
Jacobian, SNL-normalized spectra are stored as they are.
"""

import json
import math
import traceback
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from src.model.params import TWO_PI
from src.spectra.psd import FrequencyGrid, GridKind, Normalization, Quantity, Spectrum
from src.sweep.axes import Axis, AxisName

FLOAT_FORMAT = "%.15g"
MANIFEST_NAME = "manifest.json"
ERROR_NAME = "error.json"


def _jacobian(normalization: Normalization) -> float:
    return TWO_PI if normalization is Normalization.ABSOLUTE else 1.0


def write_spectrum(spec: Spectrum, path: Path) -> Path:
    """
    Write a spectrum as ``freq_hz,value`` rows under two comment lines.

    Args:
        spec: Spectrum on an angular-frequency grid
        path: Output CSV

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    jacobian = _jacobian(spec.normalization)
    frame = pd.DataFrame(
        {"freq_hz": spec.grid.points / TWO_PI, "value": spec.values * jacobian}
    )
    with open(path, "w", newline="") as f:
        f.write(f"# {spec.quantity.value}, {spec.normalization.value}, {spec.values.size}\n")
        f.write(f"# value_per_hz = {'2pi' if jacobian != 1.0 else '1'} * value_per_rad_s\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_spectrum(path: Path) -> Spectrum:
    """Inverse of write_spectrum."""
    with open(path, "r") as f:
        header = f.readline().lstrip("#").strip()
    quantity, normalization, n_points = (part.strip() for part in header.split(","))
    normalization = Normalization(normalization)
    frame = pd.read_csv(path, comment="#")
    if len(frame) != int(n_points):
        raise ValueError(f"{path}: header announces {n_points} points, found {len(frame)}")
    omega = frame["freq_hz"].to_numpy() * TWO_PI
    values = frame["value"].to_numpy() / _jacobian(normalization)
    grid = FrequencyGrid(omega, GridKind.LINEAR_WINDOW, 0.5 * (omega[0] + omega[-1]), 0.5 * (omega[-1] - omega[0]))
    return Spectrum(grid, values, normalization, Quantity(quantity))


def _axis_line(label: str, axis: Axis) -> str:
    values = ",".join(FLOAT_FORMAT % value for value in axis.values)
    return f"# {label}: {axis.name.value},{values}\n"


def _parse_axis_line(line: str) -> Axis:
    _, payload = line.lstrip("#").split(":", 1)
    parts = payload.strip().split(",")
    return Axis(name=AxisName(parts[0]), values=[float(value) for value in parts[1:]])


def write_matrix(matrix: np.ndarray, axis1: Axis, axis2: Axis, path: Path, integer: bool = False) -> Path:
    """
    Write a grid matrix with two axis header lines.

    Row i belongs to axis1[i], column j to axis2[j]. Non-finite entries become
    empty fields.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.where(np.isfinite(matrix), matrix, np.nan))
    with open(path, "w", newline="") as f:
        f.write(_axis_line("axis1", axis1))
        f.write(_axis_line("axis2", axis2))
        frame.to_csv(
            f,
            header=False,
            index=False,
            na_rep="",
            float_format="%d" if integer else FLOAT_FORMAT,
            lineterminator="\n",
        )
    return path


def read_matrix(path: Path) -> Tuple[Axis, Axis, np.ndarray]:
    """Inverse of write_matrix; empty fields come back as +inf."""
    with open(path, "r") as f:
        axis1 = _parse_axis_line(f.readline())
        axis2 = _parse_axis_line(f.readline())
    frame = pd.read_csv(path, comment="#", header=None, skip_blank_lines=False)
    matrix = frame.to_numpy(dtype=float)
    matrix = np.where(np.isnan(matrix), math.inf, matrix)
    if matrix.shape != (len(axis1), len(axis2)):
        raise ValueError(f"{path}: matrix shape {matrix.shape} does not match the axes")
    return axis1, axis2, matrix


def write_mask(codes: np.ndarray, axis1: Axis, axis2: Axis, path: Path) -> Path:
    """Stability mask with codes 0 stable, 1 unstable, 2 undetermined, 3 marginal."""
    return write_matrix(codes.astype(float), axis1, axis2, path, integer=True)


def read_mask(path: Path) -> Tuple[Axis, Axis, np.ndarray]:
    axis1, axis2, matrix = read_matrix(path)
    return axis1, axis2, matrix.astype(int)


def write_heatmap(n_bar: np.ndarray, axis1: Axis, axis2: Axis, path: Path) -> Path:
    """Phonon-number matrix; unstable cells are written as empty fields."""
    return write_matrix(n_bar, axis1, axis2, path)


def read_heatmap(path: Path) -> Tuple[Axis, Axis, np.ndarray]:
    return read_matrix(path)


def write_table(columns: Dict[str, Iterable[float]], path: Path) -> Path:
    """Column table (curves, bands, regressions); non-finite values become empty fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({name: np.asarray(list(values), dtype=float) for name, values in columns.items()})
    frame = frame.where(np.isfinite(frame), np.nan)
    frame.to_csv(path, index=False, na_rep="", float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_table(path: Path) -> Dict[str, np.ndarray]:
    frame = pd.read_csv(path)
    columns = {}
    for name in frame.columns:
        values = frame[name].to_numpy(dtype=float)
        columns[name] = np.where(np.isnan(values), math.inf, values)
    return columns


def write_json(payload: dict, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=4, default=_json_default)
    return path


def read_json(path: Path) -> dict:
    with open(path, "r") as f:
        return json.load(f)


def _json_default(value):
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    artifacts: List[Path],
    complete: bool = True,
    summary: Optional[dict] = None,
) -> Path:
    """
    Record the resolved configuration and the produced files of a run.

    Only ``timestamp`` differs between two identical runs.
    """
    out_dir = Path(out_dir)
    payload = {
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "complete": complete,
        "config": config,
        "artifacts": sorted(str(Path(path).relative_to(out_dir)) for path in artifacts),
        "summary": summary or {},
    }
    if not complete:
        logger.warning(f"Run '{command}' is incomplete; see {out_dir / MANIFEST_NAME}")
    return write_json(payload, out_dir / MANIFEST_NAME)


def write_error(out_dir: Path, command: str, error: BaseException) -> Optional[Path]:
    """Write error.json if the output directory is writable; never raises."""
    record = {
        "type": type(error).__name__,
        "message": str(error),
        "command": command,
        "traceback": traceback.format_exception_only(type(error), error)[-1].strip(),
    }
    try:
        return write_json(record, Path(out_dir) / ERROR_NAME)
    except OSError as exc:
        logger.error(f"Could not write error record to {out_dir}: {exc}")
        return None
