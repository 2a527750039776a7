"""Scenario runner: parse a config file, run one experiment, write CSV/JSON.

Config format (``#`` starts a comment line)::

    kind = parabolic_run        # wave_table | parabolic_run | kinetic_run | inside_run | speed_sweep
    name = my-run

    [model]
    chi = 2.0

    [grid]
    dz = 0.05

Every key has a default (see ``KEYS``).  Unknown keys, unknown sections and
duplicate keys are errors.  Exit status: 0 success, 1 numerical failure,
2 configuration error; failures print one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import enum
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .core import ModelError, ModelParams, State, build_grid
from .inside import (
    NeutralScheme,
    build_drift,
    discrete_spectrum,
    evolve_fraction,
    symmetric_grid,
)
from .kinetic import front_state, run_kinetic, wave_state
from .pde import CFL_MAX, SchemeConfig, run_static
from .report import write_csv, write_json, write_profile_csv
from .speedlab import convergence_study, initial_nutrient
from .waves import (
    decay_roots,
    kinetic_minimal_speed,
    kinetic_profile,
    minimal_speed,
    parabolic_profile,
    solve_nutrient_profile,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ModelError):
    pass


class Kind(enum.Enum):
    WAVE_TABLE = "wave_table"
    PARABOLIC_RUN = "parabolic_run"
    KINETIC_RUN = "kinetic_run"
    INSIDE_RUN = "inside_run"
    SPEED_SWEEP = "speed_sweep"


@dataclass(frozen=True)
class GridSpec:
    z_min: float = -50.0
    z_max: float = 150.0
    dz: float = 0.05

    def build(self):
        n = (self.z_max - self.z_min) / self.dz
        cells = int(round(n))
        if cells < 2 or abs(n - cells) > 1e-9 * max(n, 1.0):
            raise ConfigError(f"dz = {self.dz!r} does not divide [{self.z_min!r}, {self.z_max!r}]")
        return build_grid(self.z_min, self.z_max, cells)


@dataclass(frozen=True)
class SchemeSpec:
    dt: float = 0.01
    theta: float = 0.5
    tmax: float = 5.0
    levels: int = 3
    sample_dt: float = 0.1
    courant: int = 1
    initial: str = "wave"
    fraction: str = "step"


@dataclass(frozen=True)
class Scenario:
    kind: Kind = Kind.WAVE_TABLE
    name: str = ""
    params: ModelParams = field(default_factory=ModelParams)
    kinetic: bool = False
    chi_list: Tuple[float, ...] = (0.5, 1.0, 1.5, 2.0, 3.0)
    grid: GridSpec = field(default_factory=GridSpec)
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    output: str = "out"

    @property
    def label(self) -> str:
        return self.name or self.kind.value


# section -> key -> (kind of value, where it lives)
KEYS: Dict[str, Dict[str, Tuple[str, str]]] = {
    "": {"kind": ("kind", "kind"), "name": ("str", "name")},
    "model": {
        "chi": ("float", "params.chi"),
        "diffusion_n": ("float", "params.diffusion_n"),
        "n_threshold": ("float", "params.n_threshold"),
        "epsilon": ("float", "params.epsilon"),
        "kinetic": ("bool", "kinetic"),
        "chi_list": ("floats", "chi_list"),
    },
    "grid": {
        "z_min": ("float", "grid.z_min"),
        "z_max": ("float", "grid.z_max"),
        "dz": ("float", "grid.dz"),
    },
    "scheme": {
        "dt": ("float", "scheme.dt"),
        "theta": ("float", "scheme.theta"),
        "tmax": ("float", "scheme.tmax"),
        "levels": ("int", "scheme.levels"),
        "sample_dt": ("float", "scheme.sample_dt"),
        "courant": ("int", "scheme.courant"),
        "initial": ("str", "scheme.initial"),
        "fraction": ("str", "scheme.fraction"),
    },
    "output": {"dir": ("str", "output")},
}
INITIAL_CHOICES = ("wave", "front")
FRACTION_CHOICES = ("step", "bump", "constant")


def _convert(kind: str, text: str, where: str):
    try:
        if kind == "float":
            value = float(text)
            if not math.isfinite(value):
                raise ValueError
            return value
        if kind == "int":
            return int(text)
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind == "floats":
            items = [s.strip() for s in text.split(",") if s.strip()]
            if not items:
                raise ValueError
            return tuple(float(s) for s in items)
        if kind == "kind":
            return Kind(text)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {kind}") from None


def _render(kind: str, value) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "kind":
        return value.value
    return str(value)


def _get(obj, path: str):
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _assemble(values: Dict[str, object]) -> Scenario:
    """Build a Scenario from dotted paths; raises ConfigError on invalid values."""
    groups: Dict[str, Dict[str, object]] = {"params": {}, "grid": {}, "scheme": {}}
    top: Dict[str, object] = {}
    for path, value in values.items():
        head, _, tail = path.partition(".")
        if tail:
            groups[head][tail] = value
        else:
            top[head] = value
    try:
        params = replace(ModelParams(), **groups["params"])
    except ModelError as exc:
        raise ConfigError(str(exc)) from None
    scenario = Scenario(params=params, grid=replace(GridSpec(), **groups["grid"]),
                        scheme=replace(SchemeSpec(), **groups["scheme"]), **top)
    validate(scenario)
    return scenario


def parse_config(text: str) -> Scenario:
    """Parse the line-based ``key = value`` format into a validated Scenario."""
    section = ""
    seen: Dict[Tuple[str, str], int] = {}
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in KEYS or section == "":
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.split("#", 1)[0].strip()
        if key not in KEYS[section]:
            where = f"[{section}]" if section else "top level"
            raise ConfigError(f"line {lineno}: unknown key {key!r} in {where}")
        if (section, key) in seen:
            raise ConfigError(
                f"duplicate key {key!r}: lines {seen[(section, key)]} and {lineno}"
            )
        seen[(section, key)] = lineno
        kind, path = KEYS[section][key]
        values[path] = _convert(kind, value, f"line {lineno}")
    return _assemble(values)


def serialize(s: Scenario) -> str:
    """Config text that re-parses to ``s``; every key is written out."""
    lines: List[str] = []
    for section, keys in KEYS.items():
        if section:
            lines.append("")
            lines.append(f"[{section}]")
        for key, (kind, path) in keys.items():
            lines.append(f"{key} = {_render(kind, _get(s, path))}")
    return "\n".join(lines) + "\n"


def validate(s: Scenario) -> None:
    """Range checks that make the dispatched module's preconditions hold."""
    if s.grid.dz <= 0:
        raise ConfigError("dz must be positive")
    if not s.grid.z_min < s.grid.z_max:
        raise ConfigError("z_min must be smaller than z_max")
    s.grid.build()
    sc = s.scheme
    for name in ("dt", "tmax", "sample_dt"):
        if not getattr(sc, name) > 0:
            raise ConfigError(f"{name} must be positive")
    if not 0 <= sc.theta <= 1:
        raise ConfigError("theta must lie in [0, 1]")
    if sc.levels < 2:
        raise ConfigError("levels must be at least 2")
    if sc.courant < 1:
        raise ConfigError("courant must be a positive integer")
    if sc.initial not in INITIAL_CHOICES:
        raise ConfigError(f"initial must be one of {', '.join(INITIAL_CHOICES)}")
    if sc.fraction not in FRACTION_CHOICES:
        raise ConfigError(f"fraction must be one of {', '.join(FRACTION_CHOICES)}")
    if any(not c > 0 for c in s.chi_list):
        raise ConfigError("chi must be positive")
    p = s.params
    if s.kind is Kind.KINETIC_RUN or (s.kind is Kind.SPEED_SWEEP and s.kinetic):
        if p.epsilon >= 1:
            raise ConfigError("kinetic runs need epsilon < 1")
        if p.chi * p.epsilon >= 1:
            raise ConfigError("kinetic runs need chi * epsilon < 1")
        h = sc.courant * p.epsilon * s.grid.dz / p.epsilon**2
        if h > 2:
            raise ConfigError("courant * dz / epsilon must not exceed 2")
    elif s.kind in (Kind.PARABOLIC_RUN, Kind.SPEED_SWEEP):
        if p.chi * sc.dt / s.grid.dz > CFL_MAX * (1 + 1e-12):
            raise ConfigError(f"CFL violated: chi * dt / dz must not exceed {CFL_MAX}")


# --------------------------------------------------------------------------
# runners


def _meta(s: Scenario) -> Dict[str, object]:
    meta: Dict[str, object] = {"scenario": s.label}
    for section, keys in KEYS.items():
        for key, (kind, path) in keys.items():
            prefix = f"{section}." if section else ""
            meta[prefix + key] = _render(kind, _get(s, path))
    return meta


def _run_wave_table(s: Scenario, out: Path) -> List[Path]:
    rows = []
    for chi in s.chi_list:
        sigma = minimal_speed(chi)
        mu_m, mu_p = decay_roots(sigma)
        rows.append((chi, sigma, mu_m, mu_p))
    files = [write_csv(out / "wave_table.csv", ["chi", "sigma_star", "mu_minus", "mu_plus"], rows, _meta(s))]
    p = s.params
    grid = s.grid.build()
    if s.kinetic:
        prof = kinetic_profile(p.chi, p.epsilon, kinetic_minimal_speed(p.chi, p.epsilon))
        eps = p.epsilon
    else:
        prof = parabolic_profile(p.chi, minimal_speed(p.chi))
        eps = None
    nprof = solve_nutrient_profile(prof, p.diffusion_n, p.n_threshold, grid)
    prof = prof.scaled(nprof.a_left_calibrated)
    files.append(write_profile_csv(out / "profile.csv", prof, nprof.samples, grid, p.diffusion_n,
                                   p.n_threshold, eps))
    return files


_TRAJ_COLUMNS = ["t", "xbar", "xdot_ode", "xdot_slope", "mass_rho", "dn_min"]


def _trajectory_rows(run):
    return [(r.time, r.xbar, r.xdot, r.xdot_slope, r.mass_rho, r.dn_min) for r in run.records]


def _run_parabolic(s: Scenario, out: Path) -> List[Path]:
    p, grid = s.params, s.grid.build()
    z = grid.centers
    if s.scheme.initial == "wave":
        prof = parabolic_profile(p.chi, minimal_speed(p.chi))
        nprof = solve_nutrient_profile(prof, p.diffusion_n, p.n_threshold, grid)
        rho0 = grid.sample(prof.scaled(nprof.a_left_calibrated).rho)
        state = State(rho0, nprof.samples)
    else:
        state = State(grid.field((z <= 0).astype(float)), grid.field(initial_nutrient(z, p.n_threshold)))
    every = max(1, int(round(s.scheme.sample_dt / s.scheme.dt)))
    run = run_static(state, p, SchemeConfig(s.scheme.dt, s.scheme.theta), s.scheme.tmax, record_every=every)
    meta = _meta(s)
    fin = run.state
    return [
        write_csv(out / "trajectory.csv", _TRAJ_COLUMNS, _trajectory_rows(run), meta),
        write_csv(out / "snapshot.csv", ["z", "rho", "n"],
                  zip(z, fin.rho.values, fin.nutrient.values), {**meta, "t": fin.time}),
    ]


def _run_kinetic(s: Scenario, out: Path) -> List[Path]:
    p, grid = s.params, s.grid.build()
    z = grid.centers
    if s.scheme.initial == "wave":
        prof = kinetic_profile(p.chi, p.epsilon, kinetic_minimal_speed(p.chi, p.epsilon))
        ks = wave_state(prof, grid, p.diffusion_n, p.n_threshold)
    else:
        ks = front_state(grid, p.epsilon, p.chi)
    dt = s.scheme.courant * p.epsilon * grid.dz
    every = max(1, int(round(s.scheme.sample_dt / dt)))
    run = run_kinetic(ks, p, SchemeConfig(dt, s.scheme.theta), s.scheme.tmax, record_every=every)
    fin = run.snapshots["kinetic"]
    meta = _meta(s)
    return [
        write_csv(out / "trajectory.csv", _TRAJ_COLUMNS, _trajectory_rows(run), meta),
        write_csv(out / "snapshot.csv", ["z", "f_plus", "f_minus", "rho", "n"],
                  zip(z, fin.f_plus.values, fin.f_minus.values, fin.rho.values, fin.nutrient.values),
                  {**meta, "t": fin.time}),
    ]


def _initial_fraction(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "step":
        return (z <= 0).astype(float)
    if kind == "bump":
        return (np.abs(z) <= 5).astype(float)
    return np.full(z.size, 0.5)


def _run_inside(s: Scenario, out: Path) -> List[Path]:
    p, grid = s.params, s.grid.build()
    drift = build_drift(parabolic_profile(p.chi, minimal_speed(p.chi)))
    nu0 = grid.field(_initial_fraction(s.scheme.fraction, grid.centers))
    _, series = evolve_fraction(nu0, drift, NeutralScheme(s.scheme.dt), s.scheme.tmax,
                                every=s.scheme.sample_dt)
    meta = _meta(s)
    files = [write_csv(out / "decay.csv", ["t", "metric", "bound"],
                       zip(series.times, series.metric, series.bound), meta)]
    if drift.pushed:
        half = max(-s.grid.z_min, s.grid.z_max)
        report = discrete_spectrum(drift, symmetric_grid(half, s.grid.dz), k=5, nu0=nu0)
        files.append(write_csv(out / "gap.csv", ["gamma_formula", "lambda0", "lambda1", "mean_weight"],
                               [(report.gamma_formula, report.lambda0, report.lambda1,
                                 report.mean_weight)], meta))
        files.append(write_csv(out / "eigen.csv", ["index", "eigenvalue"],
                               enumerate(report.eigenvalues), meta))
    return files


def _run_sweep(s: Scenario, out: Path) -> List[Path]:
    p = s.params
    result = convergence_study(p, s.scheme.levels, dz0=s.grid.dz, t_end=s.scheme.tmax,
                               kinetic=s.kinetic, courant=s.scheme.dt / s.grid.dz)
    cols = ["chi", "eps_or_none", "dz", "dt", "measured_speed", "predicted_speed", "rel_error"]
    rows = [(r.chi, r.eps_or_none, r.dz, r.dt, r.measured_speed, r.predicted_speed, r.rel_error)
            for r in result.rows]
    meta = _meta(s)
    summary = {
        s.label: {
            "predicted": result.predicted_speed,
            "measured": result.rows[-1].measured_speed,
            "rel_error": result.rows[-1].rel_error,
            "extrapolated": result.extrapolated_speed,
            "extrapolated_rel_error": result.extrapolated_rel_error,
            "order": result.order,
            "errors_decrease": result.errors_decrease,
        }
    }
    return [write_csv(out / "sweep.csv", cols, rows, meta), write_json(out / "summary.json", summary)]


_RUNNERS = {
    Kind.WAVE_TABLE: _run_wave_table,
    Kind.PARABOLIC_RUN: _run_parabolic,
    Kind.KINETIC_RUN: _run_kinetic,
    Kind.INSIDE_RUN: _run_inside,
    Kind.SPEED_SWEEP: _run_sweep,
}


def run_scenario(s: Scenario, out_dir: Optional[Path] = None) -> List[Path]:
    """Run ``s`` and return the written files.  Errors propagate."""
    out = Path(out_dir if out_dir is not None else s.output)
    out.mkdir(parents=True, exist_ok=True)
    logger.info("running %s (%s) into %s", s.label, s.kind.value, out)
    return _RUNNERS[s.kind](s, out)


# --------------------------------------------------------------------------
# command line


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="goorgrow", description="Run a go-or-grow front scenario.")
    ap.add_argument("--scenario", type=Path, help="config file (key = value with [sections])")
    ap.add_argument("--kind", choices=[k.value for k in Kind], help="scenario kind")
    ap.add_argument("--chi", type=float)
    ap.add_argument("--epsilon", type=float)
    ap.add_argument("--dz", type=float)
    ap.add_argument("--dt", type=float)
    ap.add_argument("--tmax", type=float)
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"goorgrow {__version__}")
    return ap


def _fail(status: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"status": kind, "message": message}) + "\n")
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.scenario.read_text(encoding="utf-8") if args.scenario else ""
        base = parse_config(text)
        values = {path: _get(base, path) for sec in KEYS.values() for _, path in sec.values()}
        overrides = {"chi": "params.chi", "epsilon": "params.epsilon", "dz": "grid.dz",
                     "dt": "scheme.dt", "tmax": "scheme.tmax"}
        for flag, path in overrides.items():
            if getattr(args, flag) is not None:
                values[path] = getattr(args, flag)
        if args.kind:
            values["kind"] = Kind(args.kind)
        if args.out is not None:
            values["output"] = str(args.out)
        scenario = _assemble(values)
    except OSError as exc:
        return _fail(EXIT_CONFIG, "config_error", f"cannot read scenario: {exc}")
    except ModelError as exc:
        return _fail(EXIT_CONFIG, "config_error", str(exc))
    if args.print_config:
        sys.stdout.write(serialize(scenario))
        return EXIT_OK
    try:
        files = run_scenario(scenario)
    except (ModelError, RuntimeError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical_failure", f"{type(exc).__name__}: {exc}")
    for f in files:
        sys.stdout.write(f"{f}\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
