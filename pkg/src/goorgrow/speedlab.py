"""Front-speed measurement and grid-refinement studies.

Speeds are read off the threshold trajectory ``xbar(t)``.  The first fifth
of every run is discarded as transient; the fit uses a trailing window.
Pulled fronts lag their asymptotic speed by a logarithmic term, so the fit
can optionally include a free ``log t`` regressor.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import ModelError, ModelParams, State, build_grid
from .kinetic import front_state, run_kinetic
from .pde import SchemeConfig, run_static
from .waves import kinetic_minimal_speed, minimal_speed

logger = logging.getLogger(__name__)

MIN_SAMPLES = 20
DISCARD_FRACTION = 0.2


@dataclass(frozen=True)
class SpeedEstimate:
    slope: float
    intercept: float
    window: Tuple[float, float]
    rms_residual: float
    n_points: int
    slope_min: float
    slope_max: float
    log_coefficient: float = 0.0

    def __post_init__(self) -> None:
        if not self.window[0] < self.window[1]:
            raise ModelError("empty fit window")
        if not math.isfinite(self.slope):
            raise ModelError("fitted slope is not finite")


@dataclass(frozen=True)
class SweepRow:
    chi: float
    eps_or_none: Optional[float]
    dz: float
    dt: float
    measured_speed: float
    predicted_speed: float

    @property
    def rel_error(self) -> float:
        return abs(self.measured_speed - self.predicted_speed) / self.predicted_speed


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[SweepRow, ...]
    extrapolated_speed: float = float("nan")
    order: float = float("nan")

    @property
    def predicted_speed(self) -> float:
        return self.rows[0].predicted_speed

    @property
    def extrapolated_rel_error(self) -> float:
        return abs(self.extrapolated_speed - self.predicted_speed) / self.predicted_speed

    @property
    def errors_decrease(self) -> bool:
        errs = [r.rel_error for r in self.rows]
        return all(b < a for a, b in zip(errs, errs[1:]))


def _as_arrays(trajectory) -> Tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(trajectory, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ModelError("trajectory must be a sequence of (t, xbar) pairs")
    t, x = arr[:, 0], arr[:, 1]
    if t.size < MIN_SAMPLES:
        raise ModelError(f"need at least {MIN_SAMPLES} samples, got {t.size}")
    if np.any(np.diff(t) <= 0):
        raise ModelError("time stamps must be strictly increasing")
    if not np.all(np.isfinite(x)):
        raise ModelError("trajectory contains non-finite positions")
    return t, x


def estimate_speed(trajectory: Sequence[Tuple[float, float]], window_fraction: float = 0.5,
                   log_correction: bool = False) -> SpeedEstimate:
    """Least-squares speed over the trailing ``window_fraction`` of the run.

    With ``log_correction`` the model is ``xbar = s t + b log t + c`` and
    ``s`` is reported as the slope.  ``slope_min`` / ``slope_max`` are the
    extreme finite-difference slopes over the window, each taken across a
    tenth of the window so that grid-scale jitter in ``xbar`` averages out.
    """
    if not 0 < window_fraction <= 1:
        raise ModelError("window_fraction must lie in (0, 1]")
    t, x = _as_arrays(trajectory)
    span = t[-1] - t[0]
    start = max(t[-1] - window_fraction * span, t[0] + DISCARD_FRACTION * span)
    sel = t >= start - 1e-12 * span
    tw, xw = t[sel], x[sel]
    if tw.size < 3:
        raise ModelError("fewer than 3 samples in the fit window")
    columns = [tw, np.ones_like(tw)]
    if log_correction:
        if tw[0] <= 0:
            raise ModelError("log-corrected fit needs positive times in the window")
        columns.insert(1, np.log(tw))
    design = np.column_stack(columns)
    coef, *_ = np.linalg.lstsq(design, xw, rcond=None)
    resid = xw - design @ coef
    lag = max(1, tw.size // 10)
    fd = (xw[lag:] - xw[:-lag]) / (tw[lag:] - tw[:-lag])
    return SpeedEstimate(
        slope=float(coef[0]),
        intercept=float(coef[-1]),
        window=(float(tw[0]), float(tw[-1])),
        rms_residual=float(np.sqrt(np.mean(resid**2))),
        n_points=int(tw.size),
        slope_min=float(fd.min()),
        slope_max=float(fd.max()),
        log_coefficient=float(coef[1]) if log_correction else 0.0,
    )


def speed_bracket_check(trajectory, sigma_star: float, tol: float,
                        window_fraction: float = 0.5) -> Tuple[bool, bool]:
    """``(min slope <= sigma* + tol, max slope >= sigma* - tol)`` over the trailing window."""
    est = estimate_speed(trajectory, window_fraction)
    return est.slope_min <= sigma_star + tol, est.slope_max >= sigma_star - tol


# --------------------------------------------------------------------------
# simulations


def initial_nutrient(z: np.ndarray, n_threshold: float) -> np.ndarray:
    """Tanh ramp crossing ``n_threshold`` at ``z = 0``."""
    return 0.5 * (1.0 + np.tanh(z + math.atanh(2.0 * n_threshold - 1.0)))


def _front_grid(dz: float, t_end: float, speed: float, behind: float = 30.0, ahead: float = 30.0):
    length = behind + speed * t_end + ahead
    n = int(math.ceil(length / dz))
    return build_grid(-behind, -behind + n * dz, n)


def parabolic_front_trajectory(p: ModelParams, dz: float, dt: float, t_end: float,
                               sample_dt: float = 0.1) -> List[Tuple[float, float]]:
    """Threshold trajectory of the lab-frame solver started from ``rho = 1_{x <= 0}``."""
    grid = _front_grid(dz, t_end, 1.05 * minimal_speed(p.chi))
    z = grid.centers
    s = State(grid.field((z <= 0).astype(float)), grid.field(initial_nutrient(z, p.n_threshold)))
    run = run_static(s, p, SchemeConfig(dt), t_end, record_every=max(1, int(round(sample_dt / dt))))
    return run.trajectory()


def kinetic_front_trajectory(p: ModelParams, dz: float, t_end: float, courant: int = 1,
                             sample_dt: float = 0.1) -> List[Tuple[float, float]]:
    """Threshold trajectory of the kinetic solver, exact-shift time step ``courant * eps * dz``."""
    eps = p.epsilon
    dt = courant * eps * dz
    grid = _front_grid(dz, t_end, 1.05 * minimal_speed(p.chi))
    ks = front_state(grid, eps, p.chi)
    if p.n_threshold != 0.5:
        z = grid.centers
        ks = type(ks)(ks.f_plus, ks.f_minus, grid.field(initial_nutrient(z, p.n_threshold)), 0.0, eps)
    run = run_kinetic(ks, p, SchemeConfig(dt), t_end, record_every=max(1, int(round(sample_dt / dt))))
    return run.trajectory()


def predicted_speed(p: ModelParams, kinetic: bool) -> float:
    return kinetic_minimal_speed(p.chi, p.epsilon) if kinetic else minimal_speed(p.chi)


def _level_job(args):
    p, kinetic, dz, dt, t_end, window_fraction, log_correction = args
    if kinetic:
        traj = kinetic_front_trajectory(p, dz, t_end)
    else:
        traj = parabolic_front_trajectory(p, dz, dt, t_end)
    return estimate_speed(traj, window_fraction, log_correction).slope


def richardson(values: Sequence[float], ratio: float = 2.0) -> Tuple[float, float]:
    """Extrapolate a refinement sequence; returns ``(limit, order)``.

    The order is estimated from the last three values and falls back to 1
    when the differences do not contract.
    """
    v = [float(x) for x in values]
    if len(v) < 2:
        raise ModelError("need at least two levels")
    order = 1.0
    if len(v) >= 3:
        d1, d2 = v[-3] - v[-2], v[-2] - v[-1]
        if d2 != 0 and d1 / d2 > 1.0:
            order = min(max(math.log(d1 / d2, ratio), 0.5), 4.0)
    limit = v[-1] + (v[-1] - v[-2]) / (ratio**order - 1.0)
    return limit, order


def convergence_study(p: ModelParams, levels: int = 3, dz0: float = 0.1, t_end: float = 80.0,
                      kinetic: bool = False, courant: float = 0.2, window_fraction: float = 0.5,
                      log_correction: bool = True, workers: int = 1) -> SweepResult:
    """Measure the front speed on ``levels`` grids, halving ``dz`` and ``dt`` each time.

    Parabolic runs use ``dt = courant * dz``; kinetic runs use the exact-shift
    step ``dt = eps * dz``.  Levels are independent and may run in parallel.
    """
    if levels < 2:
        raise ModelError("levels must be at least 2")
    jobs = []
    for k in range(levels):
        dz = dz0 / 2**k
        dt = p.epsilon * dz if kinetic else courant * dz
        jobs.append((p, kinetic, dz, dt, t_end, window_fraction, log_correction))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            speeds = list(pool.map(_level_job, jobs))
    else:
        speeds = [_level_job(j) for j in jobs]
    pred = predicted_speed(p, kinetic)
    rows = tuple(
        SweepRow(p.chi, p.epsilon if kinetic else None, j[2], j[3], s, pred) for j, s in zip(jobs, speeds)
    )
    limit, order = richardson(speeds)
    for r in rows:
        logger.info("chi=%g dz=%g speed=%.6f (predicted %.6f)", r.chi, r.dz, r.measured_speed, pred)
    return SweepResult(rows, limit, order)
