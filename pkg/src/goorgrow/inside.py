"""Neutral fractions inside a travelling wave and the pushed/pulled diagnosis.

A neutral fraction ``nu`` (share of labelled cells) obeys the drift-diffusion
equation ``nu_t = nu'' + beta nu'`` with ``beta = sigma - chi 1_{z<=0} +
2 rho'/rho``.  Writing ``V' = beta`` turns it into the weighted conservation
law ``nu_t = exp(-V) (exp(V) nu')'``, which is how it is discretised here:
constants are exact steady states, the scheme obeys a discrete maximum
principle and conserves the weighted mass ``sum exp(V) nu``.

In the pushed regime ``exp(V)`` is integrable; fractions relax to their
weighted mean at the rate set by the spectral gap of the conjugated operator
``-f'' + (beta^2/4) f + (beta'/2) f``.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

from .core import Field, Grid1D, ModelError, integrate
from .waves import WaveProfile, minimal_speed

logger = logging.getLogger(__name__)

# relative tolerance for "sigma is the minimal speed"
_SPEED_TOL = 1e-12
# eigenvector mass allowed on the two end cells before we call the domain too short
_BOUNDARY_MASS = 1e-6
MAX_PRINCIPLE_TOL = 1e-10


@dataclass(frozen=True)
class DriftSpec:
    """Drift ``beta`` of the neutral-fraction equation and its potential ``V`` (``V(0) = 0``).

    ``jump`` is ``beta(0+) - beta(0-)``; it enters the conjugated operator as
    a point mass.  ``profile`` is ``None`` for synthetic drifts.
    """

    sigma: float
    chi: float
    beta: Callable[[np.ndarray], np.ndarray]
    v_weight: Callable[[np.ndarray], np.ndarray]
    profile: Optional[WaveProfile] = None
    jump: float = 0.0
    beta_slope: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def pushed(self) -> bool:
        return (
            self.profile is not None
            and self.chi > 1
            and abs(self.sigma - minimal_speed(self.chi)) <= _SPEED_TOL * self.sigma
        )

    def beta_prime(self, z) -> np.ndarray:
        """Regular part of ``beta'`` (the point mass at 0 is carried by ``jump``)."""
        z = np.asarray(z, dtype=float)
        if self.beta_slope is not None:
            return self.beta_slope(z)
        h = 1e-5
        zr = np.where(np.abs(z) < 2 * h, np.sign(z) * 2 * h + (z == 0) * 2 * h, z)
        return (self.beta(zr + h) - self.beta(zr - h)) / (2 * h)


def build_drift(wp: WaveProfile) -> DriftSpec:
    """Closed-form drift and potential for the wave ``wp``."""
    sigma, chi = wp.sigma, wp.chi

    def beta(z):
        z = np.asarray(z, dtype=float)
        return np.where(z <= 0, sigma - chi, sigma + 2.0 * wp.log_derivative(z))

    log_rho0 = float(wp.log_rho(np.array([1e-300]))[0])  # right limit at 0

    def v_weight(z):
        z = np.asarray(z, dtype=float)
        right = sigma * z + 2.0 * (wp.log_rho(z) - log_rho0)
        return np.where(z <= 0, (sigma - chi) * z, right)

    beta_slope = None
    if wp.slow == 0.0 and wp.lin == 0.0 or wp.fast == 0.0 and wp.lin == 0.0:
        # single exponential on the right: beta is piecewise constant
        def beta_slope(z):
            return np.zeros_like(np.asarray(z, dtype=float))

    jump = float(beta(np.array([1e-300]))[0]) - (sigma - chi)
    return DriftSpec(sigma, chi, beta, v_weight, wp, jump, beta_slope)


def constant_drift(c: float) -> DriftSpec:
    """Synthetic drift ``beta == c`` (no interface); used to validate the operator assembly."""
    return DriftSpec(
        sigma=float("nan"),
        chi=float("nan"),
        beta=lambda z: np.full_like(np.asarray(z, dtype=float), c),
        v_weight=lambda z: c * np.asarray(z, dtype=float),
        beta_slope=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
    )


@dataclass(frozen=True)
class FractionState:
    nu: Field
    time: float
    drift: DriftSpec


@dataclass(frozen=True)
class NeutralScheme:
    """Time stepping for neutral fractions.  Implicit Euler by default (keeps the maximum principle for any ``dt``)."""

    dt: float
    theta: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ModelError("dt must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ModelError("theta must lie in [0, 1]")


@dataclass(frozen=True)
class GapReport:
    gamma_formula: float
    lambda0: float
    lambda1: float
    mean_weight: float
    eigenvalues: Tuple[float, ...] = ()
    cosine: float = float("nan")


class Classification(enum.Enum):
    PUSHED = "pushed"
    PULLED = "pulled"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Verdict:
    kind: Classification
    rate: float = float("nan")


# --------------------------------------------------------------------------
# weights


def _log_weights(drift: DriftSpec, grid: Grid1D) -> Tuple[np.ndarray, np.ndarray]:
    """``V`` at cell centres and faces."""
    return drift.v_weight(grid.centers), drift.v_weight(grid.faces)


def weighted_norm(f: Field, drift: DriftSpec) -> float:
    """``L^2(exp(V))`` norm, trapezoid quadrature."""
    w = np.exp(drift.v_weight(f.grid.centers))
    return math.sqrt(max(integrate(f.with_values(f.values**2), f.with_values(w)), 0.0))


def weighted_mean(nu0: Field, drift: DriftSpec) -> float:
    """Mean of ``nu0`` against the weight ``exp(V)``; defined only in the pushed regime."""
    if not drift.pushed:
        raise ModelError("exp(V) is not integrable outside the pushed regime: weighted mean undefined")
    w = nu0.with_values(np.exp(drift.v_weight(nu0.grid.centers)))
    return integrate(nu0, w) / integrate(w)


def spectral_gap(chi: float, sigma: float) -> float:
    """Gap ``min(sigma^2 - 4, 1/chi^2) / 4`` of the pushed wave."""
    if not chi > 1:
        raise ModelError("spectral gap is defined for the pushed regime chi > 1")
    if abs(sigma - minimal_speed(chi)) > _SPEED_TOL * sigma:
        raise ModelError("spectral gap is defined at the minimal speed only")
    return 0.25 * min(sigma * sigma - 4.0, 1.0 / (chi * chi))


# --------------------------------------------------------------------------
# time stepping


def _weighted_bands(drift: DriftSpec, grid: Grid1D):
    """Tridiagonal ``exp(-V) d/dz (exp(V) d/dz)`` with zero flux at both ends."""
    v_c, v_f = _log_weights(drift, grid)
    # shift by the centre value: only ratios exp(V_face - V_centre) enter
    inv = 1.0 / (grid.dz * grid.dz)
    right = np.exp(v_f[1:] - v_c) * inv
    left = np.exp(v_f[:-1] - v_c) * inv
    right[-1] = 0.0
    left[0] = 0.0
    diag = -(left + right)
    return left, diag, right


def neutral_step(fs: FractionState, cfg: NeutralScheme, bands=None) -> FractionState:
    """One theta step of ``nu_t = exp(-V) (exp(V) nu')'``.

    The update is computed from differences of ``nu``, so constants are
    preserved exactly; for ``theta = 1`` the update matrix is an
    M-matrix and the discrete maximum principle holds for every ``dt``.
    """
    nu = fs.nu.values
    lo, di, up = bands if bands is not None else _weighted_bands(fs.drift, fs.nu.grid)
    dt, th = cfg.dt, cfg.theta
    # increment form: the right-hand side is built from differences, so it is
    # exactly zero for a constant field and constants stay bit-for-bit fixed
    jumps = np.diff(nu)
    flux = np.zeros(nu.size + 1)
    flux[1:-1] = jumps
    action = up * flux[1:] - lo * flux[:-1]
    ab = np.empty((3, nu.size))
    ab[0, 0] = 0.0
    ab[0, 1:] = -th * dt * up[:-1]
    ab[1] = 1.0 - th * dt * di
    ab[2, :-1] = -th * dt * lo[1:]
    ab[2, -1] = 0.0
    out = nu + solve_banded((1, 1), ab, dt * action, check_finite=False)
    lo_b, hi_b = float(nu.min()), float(nu.max())
    if out.min() < lo_b - MAX_PRINCIPLE_TOL or out.max() > hi_b + MAX_PRINCIPLE_TOL:
        raise ModelError(
            f"neutral fraction left [{lo_b:.3g}, {hi_b:.3g}] (got [{out.min():.3g}, {out.max():.3g}])"
        )
    return FractionState(fs.nu.with_values(out), fs.time + dt, fs.drift)


@dataclass
class DecaySeries:
    times: List[float] = field(default_factory=list)
    metric: List[float] = field(default_factory=list)
    bound: List[float] = field(default_factory=list)

    def pairs(self) -> List[Tuple[float, float]]:
        return list(zip(self.times, self.metric))


def pushed_metric(nu: Field, drift: DriftSpec, mean: float) -> float:
    return weighted_norm(nu.with_values(nu.values - mean), drift)


def pulled_metric(nu: Field, a: float = -10.0, margin: float = 10.0) -> float:
    """``sup |nu|`` over ``[a, z_max - margin]``."""
    z = nu.grid.centers
    mask = (z >= a) & (z <= nu.grid.z_max - margin)
    if not mask.any():
        raise ModelError("empty window for the pulled metric")
    return float(np.max(np.abs(nu.values[mask])))


def evolve_fraction(nu0: Field, drift: DriftSpec, cfg: NeutralScheme, t_end: float,
                    every: float = 1.0, a: float = -10.0) -> Tuple[FractionState, DecaySeries]:
    """Evolve ``nu0`` to ``t_end`` and sample the regime-appropriate distance to the limit.

    Pushed: weighted ``L^2`` distance to the weighted mean, with the bound
    ``||nu0|| exp(-gamma t)``.  Otherwise: ``sup |nu|`` on ``[a, z_max - 10]``.
    """
    grid = nu0.grid
    bands = _weighted_bands(drift, grid)
    fs = FractionState(nu0, 0.0, drift)
    series = DecaySeries()
    if drift.pushed:
        mean = weighted_mean(nu0, drift)
        gamma = spectral_gap(drift.chi, drift.sigma)
        norm0 = weighted_norm(nu0, drift)
        measure = lambda f: pushed_metric(f, drift, mean)  # noqa: E731
        bound = lambda t: norm0 * math.exp(-gamma * t)  # noqa: E731
    else:
        measure = lambda f: pulled_metric(f, a)  # noqa: E731
        bound = lambda t: float("nan")  # noqa: E731
    n_steps = int(round(t_end / cfg.dt))
    stride = max(1, int(round(every / cfg.dt)))
    series.times.append(0.0)
    series.metric.append(measure(nu0))
    series.bound.append(bound(0.0))
    for k in range(1, n_steps + 1):
        fs = neutral_step(fs, cfg, bands)
        if k % stride == 0 or k == n_steps:
            t = k * cfg.dt  # not the accumulated sum, so sample times are exact
            series.times.append(t)
            series.metric.append(measure(fs.nu))
            series.bound.append(bound(t))
    return fs, series


# --------------------------------------------------------------------------
# spectrum


def pulled_back_bands(drift: DriftSpec, grid: Grid1D) -> Tuple[np.ndarray, np.ndarray]:
    """Symmetric tridiagonal form of ``-f'' + (beta^2/4 + beta'/2) f`` with Dirichlet ends.

    The point mass ``jump * delta_0 / 2`` of ``beta'/2`` is lumped onto the
    cell nearest ``z = 0`` as ``jump / (2 dz)``; that cell takes the mean of
    the one-sided values of ``beta^2``.
    """
    z = grid.centers
    dz = grid.dz
    beta = drift.beta(z)
    pot = 0.25 * beta**2 + 0.5 * drift.beta_prime(z)
    if drift.jump != 0.0:
        i0 = int(np.argmin(np.abs(z)))
        left = drift.beta(np.array([-1e-300]))[0]
        right = drift.beta(np.array([1e-300]))[0]
        pot[i0] = 0.125 * (left**2 + right**2) + 0.5 * drift.jump / dz
    diag = 2.0 / dz**2 + pot
    off = np.full(z.size - 1, -1.0 / dz**2)
    return diag, off


def discrete_spectrum(drift: DriftSpec, grid: Grid1D, k: int = 2, nu0: Optional[Field] = None) -> GapReport:
    """Smallest ``k`` eigenvalues of the conjugated operator on ``grid``.

    ``grid`` should have a cell centred on ``z = 0`` (odd, symmetric cell count).
    Raises when the ground state carries noticeable mass on the end cells.
    """
    if k < 2:
        raise ModelError("need at least two eigenvalues")
    diag, off = pulled_back_bands(drift, grid)
    vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    ground = vecs[:, 0]
    end_mass = float(ground[0] ** 2 + ground[-1] ** 2)
    if end_mass > _BOUNDARY_MASS:
        raise ModelError(f"ground state has mass {end_mass:.2e} on the boundary: domain too short")
    half = np.exp(0.5 * drift.v_weight(grid.centers))
    cosine = float(abs(np.dot(ground, half)) / (np.linalg.norm(ground) * np.linalg.norm(half)))
    gamma = spectral_gap(drift.chi, drift.sigma) if drift.pushed else float("nan")
    mean = weighted_mean(nu0, drift) if nu0 is not None else float("nan")
    return GapReport(gamma, float(vals[0]), float(vals[1]), mean, tuple(float(v) for v in vals), cosine)


# --------------------------------------------------------------------------
# classification


def classify(series: Sequence[Tuple[float, float]], drift: DriftSpec, threshold: float = 1e-2,
             tolerance: float = 0.1) -> Verdict:
    """Pushed/pulled verdict from a decay series ``[(t, metric), ...]``.

    Pushed: weight integrable and ``log(metric)`` decays linearly at a rate of
    at least ``(1 - tolerance) gamma``.  Pulled: weight not integrable and the
    metric falls below ``threshold``.  Anything else is inconclusive.
    """
    if len(series) < 10:
        raise ModelError("classification needs at least 10 samples")
    t = np.array([s[0] for s in series], dtype=float)
    m = np.array([s[1] for s in series], dtype=float)
    if drift.pushed:
        if np.all(m <= 1e-300):
            return Verdict(Classification.PUSHED, float("inf"))
        gamma = spectral_gap(drift.chi, drift.sigma)
        keep = m > max(m[0], 1e-300) * 1e-12
        if keep.sum() < 3:
            return Verdict(Classification.INCONCLUSIVE)
        # discard the first fifth: high modes decay faster and bend the early curve
        start = t[keep][0] + 0.2 * (t[keep][-1] - t[keep][0])
        sel = keep & (t >= start)
        slope = np.polyfit(t[sel], np.log(m[sel]), 1)[0]
        rate = -float(slope)
        if rate >= (1 - tolerance) * gamma:
            return Verdict(Classification.PUSHED, rate)
        return Verdict(Classification.INCONCLUSIVE, rate)
    if m[-1] < threshold:
        return Verdict(Classification.PULLED)
    return Verdict(Classification.INCONCLUSIVE)


def symmetric_grid(half_width: float, dz: float) -> Grid1D:
    """Grid with a cell centred on ``z = 0`` spanning at least ``[-half_width, half_width]``."""
    m = int(math.ceil(half_width / dz))
    n = 2 * m + 1
    return Grid1D(-(m + 0.5) * dz, (m + 0.5) * dz, n)
