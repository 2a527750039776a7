"""Shared fixtures: expensive simulations are run once per session and cached."""
from __future__ import annotations

import functools

import numpy as np
import pytest

from goorgrow.core import ModelParams, State, build_grid
from goorgrow.inside import NeutralScheme, build_drift, evolve_fraction
from goorgrow.kinetic import wave_state
from goorgrow.pde import SchemeConfig, interface_position, run_static
from goorgrow.speedlab import (
    convergence_study,
    kinetic_front_trajectory,
    parabolic_front_trajectory,
)
from goorgrow.waves import (
    kinetic_minimal_speed,
    kinetic_profile,
    minimal_speed,
    parabolic_profile,
    solve_nutrient_profile,
)

FRONT_DZ = 0.05
FRONT_DT = 0.01
FRONT_T = 80.0

_RESULTS: dict = {}

# nontrivial initial fractions behind the pushed wave
PUSHED_DATA = {
    "step": lambda z: (z <= 0).astype(float),
    "front_step": lambda z: (z > 0).astype(float),
    "bump": lambda z: (np.abs(z) < 5).astype(float),
    "ramp": lambda z: 0.5 * (1 + np.tanh(z / 3)),
    "ripple": lambda z: 0.5 + 0.5 * np.cos(z / 4),
}


class Simulations:
    """Lazily evaluated, memoised long runs shared by module and acceptance tests."""

    @functools.lru_cache(maxsize=None)
    def front(self, chi: float):
        """Parabolic step-data trajectory at ``dz = 0.05``, ``dt = 0.01`` up to ``t = 80``."""
        return parabolic_front_trajectory(ModelParams(chi=chi), FRONT_DZ, FRONT_DT, FRONT_T)

    @functools.lru_cache(maxsize=None)
    def study(self, chi: float):
        """Three-level parabolic refinement study from ``dz = 0.1``."""
        return convergence_study(ModelParams(chi=chi), levels=3, dz0=0.1, t_end=FRONT_T)

    @functools.lru_cache(maxsize=None)
    def kinetic_front(self, chi: float, eps: float, dz: float = FRONT_DZ, t_end: float = FRONT_T):
        return kinetic_front_trajectory(ModelParams(chi=chi, epsilon=eps), dz, t_end)

    @functools.lru_cache(maxsize=None)
    def pushed_fraction(self, kind: str):
        """Neutral fraction behind the pushed wave (chi = 2) on [-80, 80] up to t = 40."""
        drift = build_drift(parabolic_profile(2.0, minimal_speed(2.0)))
        grid = build_grid(-80.0, 80.0, 8000)
        nu0 = grid.field(PUSHED_DATA[kind](grid.centers))
        return nu0, evolve_fraction(nu0, drift, NeutralScheme(0.05), 40.0, every=1.0)

    @functools.lru_cache(maxsize=None)
    def pulled_fraction(self, kind: str):
        """Neutral fraction behind the pulled wave (chi = 0.5) on [-150, 250]."""
        drift = build_drift(parabolic_profile(0.5, minimal_speed(0.5)))
        grid = build_grid(-150.0, 250.0, 8000)
        z = grid.centers
        nu0 = (np.abs(z) < 5).astype(float) if kind == "bump" else np.full(z.size, 0.375)
        return evolve_fraction(grid.field(nu0), drift, NeutralScheme(0.05), 400.0, every=1.0)

    @functools.lru_cache(maxsize=None)
    def stationarity(self, dz: float, dt: float):
        """Pushed wave (chi = 2) seeded on [-50, 150] and run to t = 5 in the laboratory frame.

        Returns ``(error, run)``: the sup deviation of rho from the exact profile
        placed at the tracked threshold, over ``z - xbar > -40``.
        """
        grid = build_grid(-50.0, 150.0, int(round(200.0 / dz)))
        wp = parabolic_profile(2.0, minimal_speed(2.0))
        npf = solve_nutrient_profile(wp, 1.0, 0.5, grid)
        wp = wp.scaled(npf.a_left_calibrated)
        p = ModelParams(chi=2.0)
        run = run_static(State(grid.sample(wp.rho), npf.samples), p, SchemeConfig(dt), 5.0,
                         record_every=10)
        xbar = interface_position(run.state.nutrient, p.n_threshold)
        z = grid.centers
        mask = z - xbar > -40.0
        err = float(np.max(np.abs(run.state.rho.values - wp.rho(z - xbar))[mask]))
        return err, run

    @functools.lru_cache(maxsize=None)
    def kinetic_wave(self, chi: float, eps: float, dz: float):
        prof = kinetic_profile(chi, eps, kinetic_minimal_speed(chi, eps))
        grid = build_grid(-30.0, 50.0, int(round(80.0 / dz)))
        return prof, wave_state(prof, grid, 1.0, 0.5)


@pytest.fixture(scope="session")
def sims() -> Simulations:
    return Simulations()


@pytest.fixture
def acceptance():
    """``check(number, ok, detail)``: record a PASS/FAIL line, then assert."""

    def check(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _RESULTS[number] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_RESULTS):
            terminalreporter.write_line(_RESULTS[number])
