"""Two-velocity kinetic model with persistence, and the subsonic-wave analysis.

Cells run at speeds ``+-1/eps`` and tumble at rate ``eps^-2`` towards a
Maxwellian that is isotropic above the nutrient threshold and biased by
``+-eps chi`` (along the nutrient gradient) below it.  Cells above the
threshold divide; daughters pick either direction with equal probability.

The solver splits one step into exact transport (integer Courant number,
pure index shift), a trapezoidal step of the linear tumbling term (which
gives the lattice walk the exact unit diffusivity), exact
growth/consumption and a theta step of nutrient diffusion.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import Field, Grid1D, ModelError, ModelParams, State, integrate
from .pde import (
    CFL_MAX,
    CFLError,
    InterfaceRecord,
    Run,
    SchemeConfig,
    _apply_bands,
    _laplacian_bands,
    _theta_solve,
    interface_position,
    left_face_value,
    monotonicity_margin,
)
from .waves import KineticWaveProfile, positivity_margin, solve_nutrient_profile

logger = logging.getLogger(__name__)

NEGATIVITY_TOL = 1e-12
# nutrient increments this small are round-off and count as a nonnegative gradient
GRADIENT_TOL = 1e-13


@dataclass(frozen=True)
class KineticState:
    f_plus: Field
    f_minus: Field
    nutrient: Field
    time: float = 0.0
    epsilon: float = 0.25

    def __post_init__(self) -> None:
        if not (self.f_plus.grid == self.f_minus.grid == self.nutrient.grid):
            raise ModelError("kinetic fields must share one grid")
        if np.any(self.f_plus.values < 0) or np.any(self.f_minus.values < 0):
            raise ModelError("f_plus and f_minus must be nonnegative")
        n = self.nutrient.values
        if np.any(n < 0) or np.any(n > 1):
            raise ModelError("nutrient must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ModelError("epsilon must be positive")

    @property
    def grid(self) -> Grid1D:
        return self.f_plus.grid

    @property
    def rho(self) -> Field:
        return self.f_plus.with_values(0.5 * (self.f_plus.values + self.f_minus.values))

    def as_state(self) -> State:
        """Macroscopic view ``(rho, N)`` for the shared monitors."""
        return State(self.rho, self.nutrient, self.time)


@dataclass(frozen=True)
class CharPoly:
    """``P(X) = a X^2 + b X + c``; its roots are minus the decay rates right of the interface."""

    a: float
    b: float
    c: float

    @property
    def discriminant(self) -> float:
        return self.b * self.b - 4.0 * self.a * self.c

    def roots(self) -> np.ndarray:
        return np.roots([self.a, self.b, self.c])

    def __call__(self, x):
        return (self.a * x + self.b) * x + self.c


def maxwellian_weights(n: float, dn: float, n_th: float, eps: float, chi: float) -> Tuple[float, float]:
    """Post-tumble weights ``(m_plus, m_minus)``; they always sum to 2."""
    ec = eps * chi
    if ec >= 1:
        raise ModelError("eps * chi must be smaller than 1")
    if n > n_th:
        return 1.0, 1.0
    if dn >= -GRADIENT_TOL:
        return 1.0 + ec, 1.0 - ec
    return 1.0 - ec, 1.0 + ec


def _maxwellian_field(n: np.ndarray, n_th: float, ec: float) -> np.ndarray:
    """Vectorised ``m_plus``; ``m_minus = 2 - m_plus``.  Gradient sign from forward differences."""
    dn = np.empty_like(n)
    dn[:-1] = n[1:] - n[:-1]
    dn[-1] = dn[-2] if n.size > 1 else 0.0
    biased = np.where(dn >= -GRADIENT_TOL, 1.0 + ec, 1.0 - ec)
    return np.where(n > n_th, 1.0, biased)


def characteristic_polynomial(sigma: float, eps: float) -> CharPoly:
    """Characteristic polynomial of the right-hand wave system at speed ``sigma``."""
    ie2 = 1.0 / (eps * eps)
    if math.isclose(sigma * eps, 1.0, rel_tol=1e-14, abs_tol=0.0):
        raise ModelError("sonic speed sigma = 1/eps: the wave system is singular")
    return CharPoly(ie2 - sigma * sigma, sigma * (ie2 - 1.0), ie2)


def subsonic_wave_exists(chi: float, eps: float, sigma: float) -> bool:
    """Whether a nonnegative bounded subsonic wave of speed ``sigma`` exists."""
    if not sigma * eps < 1:
        raise ModelError("query must be subsonic (sigma < 1/eps)")
    if not chi > 0 or not sigma > 0:
        raise ModelError("chi and sigma must be positive")
    if eps >= 1:
        return False
    if chi * eps >= 1:
        return False
    poly = characteristic_polynomial(sigma, eps)
    if poly.discriminant < -1e-12 * max(poly.b * poly.b, 1.0):
        return False  # complex rates: the profile oscillates
    # g is increasing in sigma; equality marks the minimal speed
    return positivity_margin(chi, eps, sigma) >= -1e-12


# --------------------------------------------------------------------------
# stepping


def _courant(eps: float, dt: float, dz: float) -> Tuple[float, Optional[int]]:
    c = dt / (eps * dz)
    k = int(round(c))
    if k >= 1 and abs(c - k) <= 1e-9 * c:
        return c, k
    if c > CFL_MAX * (1 + 1e-12):
        raise CFLError(f"transport CFL dt/(eps dz) = {c:.4g} exceeds {CFL_MAX} and is not an integer")
    return c, None


def _transport(f: np.ndarray, direction: int, c: float, shift: Optional[int]) -> np.ndarray:
    """Move ``f`` by ``c`` cells in ``direction``; the inflow boundary repeats its edge value."""
    if shift is not None:
        if shift >= f.size:
            raise CFLError("transport shift exceeds the grid")
        if direction > 0:
            return np.concatenate((np.full(shift, f[0]), f[:-shift]))
        return np.concatenate((f[shift:], np.full(shift, f[-1])))
    out = f.copy()
    if direction > 0:
        out[1:] -= c * (f[1:] - f[:-1])
    else:
        out[:-1] -= c * (f[:-1] - f[1:])
    return out


def relaxation_factor(h: float) -> float:
    """Per-step damping of ``f - M rho`` for ``h = dt / eps^2`` (trapezoidal rule).

    On the exact-shift lattice (``dz = dt / eps``) this is the only factor
    whose correlated random walk has diffusivity exactly 1 for every ``h``;
    the exact factor ``exp(-h)`` overshoots it by about ``h^2 / 12``.
    Positivity needs ``h <= 2``.
    """
    if h > 2.0 * (1 + 1e-12):
        raise CFLError(f"dt/eps^2 = {h:.4g} > 2: tumbling step would not be positivity preserving")
    return (1.0 - 0.5 * h) / (1.0 + 0.5 * h)


def kinetic_step(ks: KineticState, p: ModelParams, cfg: SchemeConfig,
                 n_left: Optional[float] = None) -> KineticState:
    """One split step of the two-velocity system and the nutrient equation.

    ``n_left`` is the Dirichlet value of ``N`` at the left face (default:
    extrapolated from the current first two cells).
    """
    eps = ks.epsilon
    ec = eps * p.chi
    if ec >= 1:
        raise ModelError("eps * chi must be smaller than 1")
    grid = ks.grid
    dz, dt = grid.dz, cfg.dt
    c, shift = _courant(eps, dt, dz)

    fp = _transport(ks.f_plus.values, +1, c, shift)
    fm = _transport(ks.f_minus.values, -1, c, shift)

    # tumbling: d/dt f = eps^-2 (M rho - f) with rho fixed
    n = ks.nutrient.values
    if n_left is None:
        n_left = left_face_value(ks.nutrient)
    rho = 0.5 * (fp + fm)
    m_plus = _maxwellian_field(n, p.n_threshold, ec)
    decay = relaxation_factor(dt / (eps * eps))
    fp = m_plus * rho + (fp - m_plus * rho) * decay
    fm = (2.0 - m_plus) * rho + (fm - (2.0 - m_plus) * rho) * decay

    # growth above the threshold (both directions alike) and consumption, exact
    g = p.growth_rate * (n > p.n_threshold)
    gain = np.expm1(g * dt)
    consumed = np.where(g > 0, rho * gain / np.where(g > 0, g, 1.0), rho * dt)
    fp = fp + rho * gain
    fm = fm + rho * gain
    n = n * np.exp(-p.consumption_rate * consumed)

    # nutrient diffusion, Dirichlet ends
    D, th = p.diffusion_n, cfg.theta
    lo, di, up = _laplacian_bands(n.size, D, dz, "dirichlet", "dirichlet")
    src = np.zeros(n.size)
    src[0] = 2.0 * D / dz**2 * n_left
    src[-1] = 2.0 * D / dz**2 * 1.0
    rhs = n + (1 - th) * dt * _apply_bands(lo, di, up, n) + dt * src
    n = np.clip(_theta_solve(lo, di, up, rhs, dt, th), 0.0, 1.0)

    for f in (fp, fm):
        low = f.min()
        if low < -NEGATIVITY_TOL:
            logger.warning("kinetic density dipped to %.3e; clipped", low)
    fp = np.maximum(fp, 0.0)
    fm = np.maximum(fm, 0.0)
    return KineticState(grid.field(fp), grid.field(fm), grid.field(n), ks.time + dt, eps)


def run_kinetic(ks: KineticState, p: ModelParams, cfg: SchemeConfig, t_end: float,
                record_every: int = 1) -> Run:
    """Advance to ``t_end``, recording the threshold position in the laboratory frame.

    The left nutrient value is frozen at its initial value, as in the parabolic runner.
    """
    n_left = left_face_value(ks.nutrient)
    n_steps = int(round((t_end - ks.time) / cfg.dt))
    cur = ks
    first = cur.as_state()
    run = Run(first, [InterfaceRecord(cur.time, interface_position(cur.nutrient, p.n_threshold),
                                      float("nan"), monotonicity_margin(cur.nutrient),
                                      float("nan"), integrate(cur.rho))])
    for k in range(1, n_steps + 1):
        cur = kinetic_step(cur, p, cfg, n_left)
        if k % record_every == 0 or k == n_steps:
            xbar = interface_position(cur.nutrient, p.n_threshold)
            prev = run.records[-1]
            slope = (xbar - prev.xbar) / (cur.time - prev.time)
            run.records.append(InterfaceRecord(cur.time, xbar, float("nan"),
                                               monotonicity_margin(cur.nutrient), slope,
                                               integrate(cur.rho)))
    run.state = cur.as_state()
    run.snapshots["kinetic"] = cur
    return run


def wave_state(profile: KineticWaveProfile, grid: Grid1D, diffusion_n: float,
               n_threshold: float) -> KineticState:
    """Kinetic wave data on ``grid`` with the plateau calibrated so that ``N(0) = N_th``."""
    nprof = solve_nutrient_profile(profile, diffusion_n, n_threshold, grid)
    wp = profile.scaled(nprof.a_left_calibrated)
    return KineticState(grid.sample(wp.f_plus), grid.sample(wp.f_minus), nprof.samples, 0.0,
                        profile.epsilon)


def front_state(grid: Grid1D, epsilon: float, chi: float) -> KineticState:
    """Step data ``rho = 1_{z <= 0}`` at local equilibrium with a tanh nutrient ramp."""
    z = grid.centers
    rho = (z <= 0).astype(float)
    n = 0.5 * (1.0 + np.tanh(z))
    ec = epsilon * chi
    m_plus = np.where(n > 0.5, 1.0, 1.0 + ec)
    return KineticState(grid.field(m_plus * rho), grid.field((2 - m_plus) * rho), grid.field(n),
                        0.0, epsilon)
