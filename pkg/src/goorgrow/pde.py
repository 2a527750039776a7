"""Finite-volume solver for the parabolic cell/nutrient system.

One step is Strang-split: half a reaction step (solved exactly), a full
transport step, another half reaction step, then the threshold position is
recomputed.  Transport for ``rho`` is conservative: upwind advective flux on
faces left of the threshold, theta-implicit diffusion.  Because the flux is
single-valued at every face, the derivative jump at the threshold comes out
of the scheme rather than being imposed.

Boundary conditions on the truncated domain: zero diffusive flux for
``rho`` at both ends with the advective flux upwinded against a
zero-gradient ghost cell, so a plateau reaching the boundary is neither
drained nor piled up; Dirichlet for ``N`` (its initial left value, and 1 on
the right).  With ``rho`` vanishing at both ends the scheme conserves mass.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.linalg import solve_banded

from .core import Field, Frame, Grid1D, ModelError, ModelParams, State, integrate

logger = logging.getLogger(__name__)

CFL_MAX = 0.9
# N may dip by this much per unit length before monotonicity counts as lost
MONOTONE_TOL = 1e-8


class Advection(enum.Enum):
    UPWIND1 = "upwind1"


class Splitting(enum.Enum):
    STRANG = "strang"


class InterfaceUpdate(enum.Enum):
    ROOT_THEN_STEP = "root_then_step"


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    theta: float = 0.5
    advection: Advection = Advection.UPWIND1
    splitting: Splitting = Splitting.STRANG
    interface_update: InterfaceUpdate = InterfaceUpdate.ROOT_THEN_STEP

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ModelError("dt must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ModelError("theta must lie in [0, 1]")


class CFLError(ModelError):
    pass


class MonotonicityLost(RuntimeError):
    """The nutrient stopped being nondecreasing; ``state`` holds the offending step."""

    def __init__(self, message: str, state: State):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class InterfaceRecord:
    time: float
    xbar: float
    xdot: float
    dn_min: float
    xdot_slope: float = float("nan")
    mass_rho: float = float("nan")


def check_cfl(speed: float, dt: float, dz: float) -> None:
    courant = speed * dt / dz
    if courant > CFL_MAX * (1 + 1e-12):
        raise CFLError(f"CFL violated: {speed}*dt/dz = {courant:.4g} > {CFL_MAX}")


# --------------------------------------------------------------------------
# monitors


def monotonicity_margin(n: Field) -> float:
    """Minimum forward difference of ``n`` divided by ``dz`` (signed)."""
    vals = n.values
    return float(np.min(np.diff(vals)) / n.grid.dz)


def interface_position(n: Field, n_th: float) -> float:
    """Position where the nondecreasing field ``n`` crosses ``n_th``.

    Linear interpolation between the bracketing cell centres.
    """
    vals = n.values
    margin = monotonicity_margin(n)
    if margin < -MONOTONE_TOL:
        raise ModelError(f"nutrient is not monotone (margin {margin:.3e}): threshold not unique")
    if not vals[0] < n_th < vals[-1]:
        raise ModelError(
            f"threshold {n_th} not bracketed by the grid (N in [{vals[0]:.4g}, {vals[-1]:.4g}])"
        )
    i = int(np.searchsorted(vals, n_th, side="right")) - 1
    # searchsorted assumes sorted input; tiny negative wiggles are tolerated above
    i = min(max(i, 0), vals.size - 2)
    while vals[i] > n_th and i > 0:
        i -= 1
    while vals[i + 1] < n_th and i < vals.size - 2:
        i += 1
    z = n.grid.centers
    span = vals[i + 1] - vals[i]
    frac = 0.5 if span <= 0 else (n_th - vals[i]) / span
    return float(z[i] + frac * n.grid.dz)


def _interp(values: np.ndarray, grid: Grid1D, x: float) -> float:
    return float(np.interp(x, grid.centers, values))


def _slope_at(values: np.ndarray, grid: Grid1D, x: float) -> float:
    """Centred difference of ``values`` evaluated at ``x`` (linear in between)."""
    z = grid.centers
    d = np.gradient(values, grid.dz)
    return float(np.interp(x, z, d))


def interface_velocity(s_prev: State, s_next: State, n_th: float):
    """Lab-frame threshold speed from one step, by two estimators.

    Returns ``(xdot_ode, xdot_slope)``: ``-dN/dt / dN/dx`` at the threshold,
    and the finite-difference slope of the threshold trajectory.
    """
    if s_prev.grid != s_next.grid:
        raise ModelError("states live on different grids")
    dt = s_next.time - s_prev.time
    if not dt > 0:
        raise ModelError("states must be ordered in time")
    grid = s_next.grid
    x_prev = interface_position(s_prev.nutrient, n_th)
    x_next = interface_position(s_next.nutrient, n_th)
    x_mid = 0.5 * (x_prev + x_next)
    n_mid = 0.5 * (s_prev.nutrient.values + s_next.nutrient.values)
    dn_dx = _slope_at(n_mid, grid, x_mid)
    if abs(dn_dx) < 1e-8:
        raise ModelError(f"dN/dx = {dn_dx:.3e} at the threshold: interface speed undefined")
    dn_dt = (_interp(s_next.nutrient.values, grid, x_mid) - _interp(s_prev.nutrient.values, grid, x_mid)) / dt
    local_ode = -dn_dt / dn_dx
    local_slope = (x_next - x_prev) / dt
    frame_speed = 0.0
    if s_next.frame.moving:
        frame_speed = (s_next.frame.xbar - s_prev.frame.xbar) / dt
    return local_ode + frame_speed, local_slope + frame_speed


# --------------------------------------------------------------------------
# linear algebra helpers


def _laplacian_bands(n: int, coef: float, dz: float, left: str, right: str):
    """Tridiagonal ``coef * d2/dz2`` with 'flux' (zero-flux) or 'dirichlet' ends.

    Returns (lower, diag, upper) of the operator; Dirichlet boundary values
    enter through :func:`_dirichlet_source`.
    """
    r = coef / (dz * dz)
    lower = np.full(n, r)
    upper = np.full(n, r)
    diag = np.full(n, -2.0 * r)
    lower[0] = 0.0
    upper[-1] = 0.0
    diag[0] = -r if left == "flux" else -3.0 * r
    diag[-1] = -r if right == "flux" else -3.0 * r
    return lower, diag, upper


def _apply_bands(lower, diag, upper, x):
    y = diag * x
    y[1:] += lower[1:] * x[:-1]
    y[:-1] += upper[:-1] * x[1:]
    return y


def _theta_solve(lower, diag, upper, rhs, dt, theta):
    """Solve ``(I - theta dt Op) x = rhs``."""
    if theta == 0.0:
        return rhs
    ab = np.empty((3, diag.size))
    ab[0, 1:] = -theta * dt * upper[:-1]
    ab[0, 0] = 0.0
    ab[1] = 1.0 - theta * dt * diag
    ab[2, :-1] = -theta * dt * lower[1:]
    ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def _upwind_divergence(values: np.ndarray, face_vel: np.ndarray, dz: float,
                       left_value: Optional[float] = None,
                       right_value: Optional[float] = None) -> np.ndarray:
    """Divergence of the upwind flux ``a u`` on all faces.

    ``face_vel`` has one entry per face.  Boundary faces carry no flux
    unless a boundary value is supplied for inflow/outflow.
    """
    n = values.size
    flux = np.zeros(n + 1)
    a = face_vel[1:-1]
    flux[1:-1] = np.where(a > 0, a * values[:-1], a * values[1:])
    if left_value is not None:
        a0 = face_vel[0]
        flux[0] = a0 * (left_value if a0 > 0 else values[0])
    if right_value is not None:
        an = face_vel[-1]
        flux[-1] = an * (values[-1] if an > 0 else right_value)
    return (flux[1:] - flux[:-1]) / dz


# --------------------------------------------------------------------------
# reaction


def right_fraction(points: np.ndarray, xbar: float, dz: float) -> np.ndarray:
    """Share of the width-``dz`` interval centred at each point lying beyond ``xbar``.

    This is the control-volume average of the indicator ``1_{x > xbar}``; it
    keeps the discrete kink at the threshold instead of at the nearest face.
    """
    return np.clip((points - xbar) / dz + 0.5, 0.0, 1.0)


def _react(rho: np.ndarray, n: np.ndarray, grow: np.ndarray, tau: float, p: ModelParams):
    """Exact solution of ``rho' = g rho, N' = -c rho N`` over ``tau``."""
    g = p.growth_rate * grow
    growth = np.exp(g * tau)
    # integral of rho over the sub-step, exactly
    with np.errstate(invalid="ignore"):
        integral = np.where(g > 0, rho * np.expm1(g * tau) / np.where(g > 0, g, 1.0), rho * tau)
    return rho * growth, n * np.exp(-p.consumption_rate * integral)


# --------------------------------------------------------------------------
# steppers


@dataclass
class _Boundary:
    n_left: float
    n_right: float = 1.0


def left_face_value(n: Field) -> float:
    """Nutrient value at the left domain face, extrapolated linearly from the first two cells."""
    v = n.values
    return float(np.clip(1.5 * v[0] - 0.5 * v[1], 0.0, 1.0))


def _transport(rho, n, grid: Grid1D, p: ModelParams, cfg: SchemeConfig, rho_face_vel,
               n_face_vel, bc: _Boundary):
    dz, dt, th = grid.dz, cfg.dt, cfg.theta
    m = rho.size
    lo, di, up = _laplacian_bands(m, 1.0, dz, "flux", "flux")
    rhs = rho + (1 - th) * dt * _apply_bands(lo, di, up, rho)
    # zero-gradient ghosts: the far-field plateau is carried through the ends
    rhs -= dt * _upwind_divergence(rho, rho_face_vel, dz, rho[0], rho[-1])
    rho_new = _theta_solve(lo, di, up, rhs, dt, th)

    D = p.diffusion_n
    lo, di, up = _laplacian_bands(m, D, dz, "dirichlet", "dirichlet")
    src = np.zeros(m)
    src[0] = 2.0 * D / dz**2 * bc.n_left
    src[-1] = 2.0 * D / dz**2 * bc.n_right
    rhs = n + (1 - th) * dt * _apply_bands(lo, di, up, n) + dt * src
    if n_face_vel is not None:
        # non-conservative transport -xdot dN/dz with constant xdot: same as conservative
        rhs -= dt * _upwind_divergence(n, n_face_vel, dz, bc.n_left, bc.n_right)
    n_new = _theta_solve(lo, di, up, rhs, dt, th)
    return rho_new, n_new


def _finish(state: State, rho, n, dt, frame: Frame, check_monotone: bool = True) -> State:
    # sub-roundoff negatives from the implicit solve
    rho = np.where(rho < 0, np.maximum(rho, 0.0), rho)
    n = np.clip(n, 0.0, 1.0)
    grid = state.grid
    new = State(Field(grid, rho), Field(grid, n), state.time + dt, frame)
    if check_monotone:
        margin = monotonicity_margin(new.nutrient)
        if margin < -MONOTONE_TOL:
            raise MonotonicityLost(f"dN/dx reached {margin:.3e} at t={new.time:.6g}", new)
    return new


def step_static(s: State, p: ModelParams, cfg: SchemeConfig, bc: Optional[_Boundary] = None,
                xbar: Optional[float] = None) -> State:
    """One Strang-split step in the laboratory frame."""
    if s.frame.moving:
        raise ModelError("step_static needs a state in the static frame")
    grid = s.grid
    check_cfl(p.chi, cfg.dt, grid.dz)
    if xbar is None:
        xbar = interface_position(s.nutrient, p.n_threshold)
    if bc is None:
        bc = _Boundary(left_face_value(s.nutrient))
    grow = right_fraction(grid.centers, xbar, grid.dz)
    rho_vel = p.chi * (1.0 - right_fraction(grid.faces, xbar, grid.dz))
    half = 0.5 * cfg.dt
    rho, n = _react(s.rho.values, s.nutrient.values, grow, half, p)
    rho, n = _transport(rho, n, grid, p, cfg, rho_vel, None, bc)
    rho, n = _react(rho, n, grow, half, p)
    return _finish(s, rho, n, cfg.dt, s.frame)


def step_moving(s: State, p: ModelParams, xdot: float, cfg: SchemeConfig,
                bc: Optional[_Boundary] = None) -> State:
    """One step in the frame ``z = x - xbar(t)`` with the threshold pinned at ``z = 0``."""
    grid = s.grid
    check_cfl(p.chi + abs(xdot), cfg.dt, grid.dz)
    if bc is None:
        bc = _Boundary(left_face_value(s.nutrient))
    grow = right_fraction(grid.centers, 0.0, grid.dz)
    rho_vel = p.chi * (1.0 - right_fraction(grid.faces, 0.0, grid.dz)) - xdot
    n_vel = np.full(grid.n_cells + 1, -float(xdot))
    half = 0.5 * cfg.dt
    rho, n = _react(s.rho.values, s.nutrient.values, grow, half, p)
    rho, n = _transport(rho, n, grid, p, cfg, rho_vel, n_vel, bc)
    rho, n = _react(rho, n, grow, half, p)
    frame = Frame.moving_at(s.frame.xbar + xdot * cfg.dt, xdot)
    return _finish(s, rho, n, cfg.dt, frame)


# --------------------------------------------------------------------------
# factorised formulation rho = v U


def jump_factor(grid: Grid1D, chi: float) -> Field:
    """``U(z) = 1`` for ``z <= 0`` and ``exp(-chi z)`` beyond; ``U`` carries the jump relation."""
    z = grid.centers
    return Field(grid, np.where(z <= 0, 1.0, np.exp(-chi * np.maximum(z, 0.0))))


def factorized_v_step(v: Field, xdot: float, p: ModelParams, cfg: SchemeConfig) -> Field:
    """One step of the smooth equation for ``v = rho / U`` in the moving frame.

    ``v_t = v_zz + beta v_z + gamma v`` with ``beta = xdot - chi`` (``z <= 0``),
    ``xdot - 2 chi`` (``z > 0``) and ``gamma = chi (chi + 1/chi - xdot)`` on ``z > 0``.
    Zero-gradient boundaries.
    """
    grid = v.grid
    chi = p.chi
    check_cfl(chi + abs(xdot), cfg.dt, grid.dz)
    z = grid.centers
    beta = np.where(z <= 0, xdot - chi, xdot - 2 * chi)
    gamma = np.where(z <= 0, 0.0, chi * (chi + 1.0 / chi - xdot)) * p.growth_rate
    dz, dt, th = grid.dz, cfg.dt, cfg.theta
    vals = v.values * np.exp(0.5 * dt * gamma)
    # upwind for beta v_z: information travels against beta
    padded = np.concatenate(([vals[0]], vals, [vals[-1]]))
    fwd = (padded[2:] - padded[1:-1]) / dz
    bwd = (padded[1:-1] - padded[:-2]) / dz
    drift = beta * np.where(beta > 0, fwd, bwd)
    lo, di, up = _laplacian_bands(vals.size, 1.0, dz, "flux", "flux")
    rhs = vals + (1 - th) * dt * _apply_bands(lo, di, up, vals) + dt * drift
    out = _theta_solve(lo, di, up, rhs, dt, th)
    out = out * np.exp(0.5 * dt * gamma)
    return Field(grid, out)


# --------------------------------------------------------------------------
# drivers


@dataclass
class Run:
    """Result of a simulation: final state, trajectory and optional snapshots."""

    state: State
    records: List[InterfaceRecord] = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    def trajectory(self):
        return [(r.time, r.xbar) for r in self.records]


def _record(prev: State, cur: State, p: ModelParams, xbar_lab: float, slope_ok: bool):
    dn_min = monotonicity_margin(cur.nutrient)
    mass = integrate(cur.rho)
    xdot_ode = xdot_slope = float("nan")
    if slope_ok:
        try:
            xdot_ode, xdot_slope = interface_velocity(prev, cur, p.n_threshold)
        except ModelError:
            pass
    return InterfaceRecord(cur.time, xbar_lab, xdot_ode, dn_min, xdot_slope, mass)


def run_static(s: State, p: ModelParams, cfg: SchemeConfig, t_end: float,
               record_every: int = 1, snapshot_times=()) -> Run:
    """Advance in the laboratory frame until ``t_end``, tracking the threshold.

    The left nutrient value is frozen at its initial value.  On a domain too
    short for the plateau the consumed nutrient then drops below it and the
    run stops with :class:`MonotonicityLost`.
    """
    bc = _Boundary(left_face_value(s.nutrient))
    n_steps = int(round((t_end - s.time) / cfg.dt))
    xbar = interface_position(s.nutrient, p.n_threshold)
    run = Run(s, [InterfaceRecord(s.time, xbar, float("nan"),
                                  monotonicity_margin(s.nutrient), float("nan"),
                                  integrate(s.rho))])
    pending = sorted(snapshot_times)
    cur = s
    for k in range(1, n_steps + 1):
        prev = cur
        cur = step_static(prev, p, cfg, bc, xbar)
        xbar = interface_position(cur.nutrient, p.n_threshold)
        if k % record_every == 0 or k == n_steps:
            run.records.append(_record(prev, cur, p, xbar, True))
        while pending and cur.time >= pending[0] - 0.5 * cfg.dt:
            run.snapshots[pending.pop(0)] = cur
    run.state = cur
    return run


def interface_speed_moving(s: State, p: ModelParams) -> float:
    """Frame speed that keeps ``N(t, 0) = N_th``: ``-(D N'' - rho N) / N'`` at ``z = 0``."""
    grid = s.grid
    n = s.nutrient.values
    d1 = np.gradient(n, grid.dz)
    d2 = np.zeros_like(n)
    d2[1:-1] = (n[2:] - 2 * n[1:-1] + n[:-2]) / grid.dz**2
    at = lambda arr: _interp(arr, grid, 0.0)  # noqa: E731
    slope = at(d1)
    if abs(slope) < 1e-8:
        raise ModelError("dN/dz vanishes at the threshold")
    return -(p.diffusion_n * at(d2) - p.consumption_rate * at(s.rho.values * n)) / slope


def run_moving(s: State, p: ModelParams, cfg: SchemeConfig, t_end: float,
               xdot: Optional[float] = None, record_every: int = 1) -> Run:
    """Advance in the moving frame.

    With ``xdot=None`` the frame speed is re-evaluated every step from the
    interface ODE so that the threshold stays at ``z = 0``.
    """
    if not s.frame.moving:
        s = replace(s, frame=Frame.moving_at(0.0, xdot or 0.0))
    bc = _Boundary(left_face_value(s.nutrient))
    n_steps = int(round((t_end - s.time) / cfg.dt))
    run = Run(s, [])
    cur = s
    for k in range(1, n_steps + 1):
        prev = cur
        speed = interface_speed_moving(prev, p) if xdot is None else xdot
        cur = step_moving(prev, p, speed, cfg, bc)
        if k % record_every == 0 or k == n_steps:
            try:
                local = interface_position(cur.nutrient, p.n_threshold)
            except ModelError:
                local = float("nan")
            run.records.append(_record(prev, cur, p, cur.frame.xbar + local, True))
    run.state = cur
    return run
