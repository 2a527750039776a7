"""CSV and JSON writers shared by the scenario runner.

Every CSV starts with ``#`` comment lines echoing the parameters and the
package version, then a header row, then the body.  Reals are written with
17 significant digits, fields are comma separated and lines end in LF, so
two runs of the same scenario produce byte-identical bodies.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .core import Grid1D


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return "%.17g" % x
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence], meta: Mapping[str, object]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# goorgrow {__version__}\n")
        for key, value in meta.items():
            fh.write(f"# {key} = {format_value(value)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv_body(path: Path):
    """Header row and body rows of a file written by :func:`write_csv` (comments skipped)."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_json(path: Path, payload: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return path


def write_profile_csv(path: Path, profile, nutrient, grid: Grid1D, diffusion_n: float,
                      n_threshold: float, epsilon=None) -> Path:
    """Export a wave profile sampled on ``grid``; kinetic profiles add ``f_plus`` and ``f_minus``."""
    z = grid.centers
    meta = {"sigma": profile.sigma, "chi": profile.chi, "diffusion_n": diffusion_n,
            "n_threshold": n_threshold, "epsilon": epsilon}
    n = np.asarray(nutrient.values if hasattr(nutrient, "values") else nutrient, dtype=float)
    if hasattr(profile, "f_plus"):
        cols = ["z", "rho", "n", "f_plus", "f_minus"]
        data = zip(z, profile.rho(z), n, profile.f_plus(z), profile.f_minus(z))
    else:
        cols = ["z", "rho", "n"]
        data = zip(z, profile.rho(z), n)
    return write_csv(path, cols, data, meta)
