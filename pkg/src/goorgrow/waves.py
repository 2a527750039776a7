"""Closed-form traveling waves of the parabolic and two-velocity kinetic systems.

Profiles are coefficient records evaluable at any ``z``; the interface
(threshold position) sits at ``z = 0`` and the wave travels to the right.
The nutrient profile is the one numerical object here: it solves a linear
second-order ODE whose amplitude is fixed by ``N(0) = N_th``.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .core import Field, Grid1D, ModelError

logger = logging.getLogger(__name__)

F_KPP_SPEED = 2.0
# relative tolerance for recognising a critical speed
_SPEED_TOL = 1e-12


def minimal_speed(chi: float) -> float:
    """Minimal parabolic wave speed: ``chi + 1/chi`` for ``chi > 1``, else 2."""
    if not chi > 0:
        raise ModelError("chi must be positive")
    if chi > 1:
        return chi + 1.0 / chi
    return F_KPP_SPEED


def decay_roots(sigma: float) -> Tuple[float, float]:
    """Roots ``mu_- <= mu_+`` of ``X^2 - sigma X + 1`` for ``sigma >= 2``."""
    if not sigma >= F_KPP_SPEED:
        raise ModelError(f"sigma={sigma} < 2: complex decay roots, no admissible wave")
    disc = math.sqrt(max(sigma * sigma - 4.0, 0.0))
    mu_plus = 0.5 * (sigma + disc)
    return 1.0 / mu_plus, mu_plus


class Regime(enum.Enum):
    SUPERCRITICAL = "supercritical"
    CRITICAL_LARGE_BIAS = "critical_large_bias"
    CRITICAL_KPP = "critical_kpp"
    CRITICAL_KPP_BOUNDARY = "critical_kpp_boundary"


@dataclass(frozen=True)
class WaveProfile:
    """Parabolic wave ``rho`` normalised by its left plateau ``a_left``.

    For ``z > 0``::

        rho(z) = a_left * ((lin * z + slow) * exp(-mu_minus z) + fast * exp(-mu_plus z))
    """

    sigma: float
    chi: float
    regime: Regime
    mu_minus: float
    mu_plus: float
    a_left: float
    slow: float
    fast: float
    lin: float = 0.0

    def scaled(self, a_left: float) -> "WaveProfile":
        if not a_left > 0:
            raise ModelError("a_left must be positive")
        return WaveProfile(self.sigma, self.chi, self.regime, self.mu_minus, self.mu_plus,
                           float(a_left), self.slow, self.fast, self.lin)

    def _bracket(self, zp):
        """``B`` and ``B'`` with ``rho = a_left exp(-mu_minus z) B(z)`` on ``z >= 0``.

        ``slow`` and ``fast`` are large with opposite signs near ``sigma = 2``;
        close to the interface ``B`` is evaluated through ``slow + fast = 1``
        and ``expm1``, which avoids the cancellation.
        """
        gap = self.mu_plus - self.mu_minus
        decay = np.exp(-gap * zp)
        fast_rate = self.fast * gap
        if gap > 0:
            phi = -np.expm1(-gap * zp) / gap
        else:
            phi = zp
        near = 1.0 + self.lin * zp - fast_rate * phi
        far = self.slow + self.lin * zp + self.fast * decay
        value = np.where(gap * zp < 1.0, near, far)
        return value, self.lin - fast_rate * decay

    def rho(self, z):
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        b, _ = self._bracket(zp)
        return self.a_left * np.where(z <= 0, 1.0, b * np.exp(-self.mu_minus * zp))

    def drho(self, z):
        """Derivative; at ``z = 0`` the left limit (zero) is returned."""
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        b, db = self._bracket(zp)
        right = (db - self.mu_minus * b) * np.exp(-self.mu_minus * zp)
        return self.a_left * np.where(z <= 0, 0.0, right)

    def log_derivative(self, z):
        """``rho'/rho``, computed without under/overflow far in the tail."""
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        b, db = self._bracket(zp)
        with np.errstate(divide="ignore", invalid="ignore"):
            right = np.where(b > 0, db / np.where(b > 0, b, 1.0) - self.mu_minus, -self.mu_plus)
        return np.where(z <= 0, 0.0, right)

    def log_rho(self, z):
        """``log rho``, evaluated in log space so that deep tails do not underflow."""
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        if self.slow == 0.0 and self.lin == 0.0:
            right = math.log(self.fast) - self.mu_plus * zp
        else:
            b, _ = self._bracket(zp)
            right = np.log(b) - self.mu_minus * zp
        return math.log(self.a_left) + np.where(z <= 0, 0.0, right)

    def jump_residual(self) -> float:
        """``rho'(0+) - rho'(0-) + chi rho(0)``, zero for a valid profile."""
        d_right = self.a_left * (self.lin - self.mu_minus * self.slow - self.mu_plus * self.fast)
        return d_right - 0.0 + self.chi * self.a_left

    def right_mass(self) -> float:
        """Closed-form integral of ``rho`` over ``(0, +inf)``."""
        m = self.slow / self.mu_minus + self.lin / self.mu_minus**2 + self.fast / self.mu_plus
        return self.a_left * m


def parabolic_profile(chi: float, sigma: float, a_left: float = 1.0) -> WaveProfile:
    """Bounded nonnegative parabolic wave of speed ``sigma`` with plateau ``a_left``."""
    if not chi > 0:
        raise ModelError("chi must be positive")
    if not a_left > 0:
        raise ModelError("a_left must be positive")
    s_star = minimal_speed(chi)
    if sigma < s_star * (1 - _SPEED_TOL):
        raise ModelError(
            f"sigma={sigma} below the minimal speed {s_star}: profile would change sign"
        )
    if abs(sigma - s_star) <= _SPEED_TOL * s_star:
        sigma = s_star
    mu_m, mu_p = decay_roots(sigma)
    if sigma == s_star and chi > 1:
        # mu_plus(sigma*) = chi: the slow mode drops out
        return WaveProfile(sigma, chi, Regime.CRITICAL_LARGE_BIAS, mu_m, chi, a_left, 0.0, 1.0)
    if sigma == F_KPP_SPEED:
        regime = Regime.CRITICAL_KPP_BOUNDARY if chi == 1 else Regime.CRITICAL_KPP
        return WaveProfile(sigma, chi, regime, 1.0, 1.0, a_left, 1.0, 0.0, 1.0 - chi)
    root = math.sqrt(sigma * sigma - 4.0)
    slow = (mu_p - chi) / root
    fast = (chi - mu_m) / root
    return WaveProfile(sigma, chi, Regime.SUPERCRITICAL, mu_m, mu_p, a_left, slow, fast)


# --------------------------------------------------------------------------
# nutrient profile


@dataclass(frozen=True)
class NutrientProfile:
    samples: Field
    a_left_calibrated: float
    sigma: float
    diffusion_n: float
    n_at_zero: float
    min_slope: float


class BracketError(ModelError):
    pass


def _shoot_nutrient(rho_right: Callable, a_left: float, sigma: float, D: float,
                    z_inf: float, h: float):
    """Integrate ``D N'' + sigma N' = rho N`` forward from ``z = 0``.

    On the left plateau the bounded solution is ``exp(lam z)`` with
    ``D lam^2 + sigma lam - a_left = 0``, which fixes ``N'(0)/N(0)``.
    Returns the unnormalised path on the mesh ``0, h, ..., z_inf`` and the
    limit of ``N`` at ``+inf`` (the far field is ``L - c exp(-sigma z / D)``).
    """
    lam = (-sigma + math.sqrt(sigma * sigma + 4.0 * D * a_left)) / (2.0 * D)
    n_steps = max(int(math.ceil(z_inf / h)), 1)
    zs = np.linspace(0.0, n_steps * h, n_steps + 1)
    # rho at mesh points and midpoints, scaled to the requested plateau
    r_nodes = a_left * rho_right(zs)
    r_mid = a_left * rho_right(zs[:-1] + 0.5 * h)
    n = np.empty(n_steps + 1)
    dn = np.empty(n_steps + 1)
    y0, y1 = 1.0, lam
    n[0], dn[0] = y0, y1
    s_over_d = sigma / D
    for i in range(n_steps):
        ra, rm, rb = r_nodes[i] / D, r_mid[i] / D, r_nodes[i + 1] / D
        k1a, k1b = y1, ra * y0 - s_over_d * y1
        u0, u1 = y0 + 0.5 * h * k1a, y1 + 0.5 * h * k1b
        k2a, k2b = u1, rm * u0 - s_over_d * u1
        u0, u1 = y0 + 0.5 * h * k2a, y1 + 0.5 * h * k2b
        k3a, k3b = u1, rm * u0 - s_over_d * u1
        u0, u1 = y0 + h * k3a, y1 + h * k3b
        k4a, k4b = u1, rb * u0 - s_over_d * u1
        y0 += h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
        y1 += h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
        n[i + 1], dn[i + 1] = y0, y1
    limit = y0 + y1 / s_over_d
    return zs, n, dn, lam, limit


def _tail_start(rho_right: Callable, a_left: float, floor: float = 1e-12) -> float:
    """First ``z`` beyond which ``a_left * rho_right`` stays below ``floor``."""
    z = 1.0
    while a_left * float(rho_right(np.array([z]))[0]) >= floor:
        z *= 1.25
        if z > 1e4:
            raise ModelError("profile does not decay")
    # refine on a mesh: the envelope may not be monotone near the interface
    zz = np.linspace(0.0, z, 2001)
    above = np.nonzero(a_left * rho_right(zz) >= floor)[0]
    return float(zz[above[-1] + 1]) if above.size else 0.0


def solve_nutrient_profile(wp, D: float, n_th: float, grid: Grid1D,
                           tol: float = 1e-8) -> NutrientProfile:
    """Nutrient companion of the wave ``wp`` with ``N(0) = n_th``.

    ``wp`` is any profile exposing ``rho(z)``, ``sigma`` and ``a_left``
    (parabolic or kinetic).  The plateau value is found by bisection: the
    map ``a_left -> N(0)`` is continuous and decreasing from 1 to 0.
    """
    if not 0 < n_th < 1:
        raise ModelError("n_th must lie in (0, 1)")
    if not D > 0:
        raise ModelError("D must be positive")
    sigma = wp.sigma
    unit = wp.scaled(1.0)

    def rho_right(z):
        return unit.rho(np.maximum(z, 1e-300))

    h = grid.dz / 4.0

    def n_at_zero(a):
        z_inf = _tail_start(rho_right, a)
        *_, limit = _shoot_nutrient(rho_right, a, sigma, D, z_inf, h)
        return 1.0 / limit

    lo, hi = 0.0, max(wp.a_left, 1e-3)
    f_hi = n_at_zero(hi)
    expand = 0
    while f_hi > n_th:
        lo, hi = hi, hi * 4.0
        f_hi = n_at_zero(hi)
        expand += 1
        if expand > 60:
            raise BracketError(f"no bracket: N(0)={f_hi} at a_left={hi} still above {n_th}")
    f_lo = 1.0 if lo == 0.0 else n_at_zero(lo)
    if not f_lo >= n_th >= f_hi:
        raise BracketError(
            f"bisection bracket failure: N(0)={f_lo} at a_left={lo}, N(0)={f_hi} at a_left={hi}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = n_at_zero(mid)
        if abs(f_mid - n_th) <= tol:
            break
        if f_mid > n_th:
            lo = mid
        else:
            hi = mid
    else:  # pragma: no cover - bisection halves the bracket each pass
        raise BracketError("bisection did not converge")
    a_star = mid

    z_inf = _tail_start(rho_right, a_star)
    zs, n, dn, lam, limit = _shoot_nutrient(rho_right, a_star, sigma, D, z_inf, h)
    n, dn = n / limit, dn / limit
    n0 = float(n[0])
    centers = grid.centers
    out = np.empty_like(centers)
    left = centers <= 0
    out[left] = n0 * np.exp(lam * centers[left])
    mid_mask = (centers > 0) & (centers <= zs[-1])
    if np.any(mid_mask):
        out[mid_mask] = CubicHermiteSpline(zs, n, dn)(centers[mid_mask])
    far = centers > zs[-1]
    # beyond the tail start rho is negligible: N = 1 - c exp(-sigma z / D)
    c_far = (1.0 - n[-1]) * math.exp(sigma * zs[-1] / D)
    out[far] = 1.0 - c_far * np.exp(-sigma * centers[far] / D)
    min_slope = float(np.min(np.diff(out)) / grid.dz)
    if min_slope < -1e-10:
        raise ModelError(
            f"nutrient profile not monotone (min slope {min_slope:.3e}); grid too short?"
        )
    return NutrientProfile(Field(grid, np.clip(out, 0.0, 1.0)), a_star, sigma, D, n0, min_slope)


def nutrient_tail_fit(np_profile: NutrientProfile, sigma: float, D: float,
                      mu: float) -> Tuple[float, bool]:
    """Smallest ``C`` with ``|N - 1| <= C (exp(-sigma z/D) + exp(-mu z))`` on ``z >= 0``.

    ``ok`` additionally requires the log-envelope of ``|N - 1|`` on the tail
    to decay at least at rate ``min(sigma/D, mu)`` (5% slack).
    """
    if not mu > 0:
        raise ModelError("mu must be positive")
    if mu == sigma / D:
        raise ModelError("mu must differ from sigma/D")
    z = np_profile.samples.grid.centers
    dev = np.abs(np_profile.samples.values - 1.0)
    sel = z >= 0
    z, dev = z[sel], dev[sel]
    env = np.exp(-sigma * z / D) + np.exp(-mu * z)
    with np.errstate(under="ignore"):
        ratios = np.where(env > 0, dev / np.where(env > 0, env, 1.0), np.where(dev > 0, np.inf, 0))
    c = float(np.max(ratios)) if ratios.size else 0.0
    if c == 0.0:
        return 0.0, True
    ok = math.isfinite(c)
    tail = dev > 1e-10
    if ok and np.count_nonzero(tail) >= 10:
        zt, dt = z[tail], dev[tail]
        half = zt >= 0.5 * (zt[0] + zt[-1])
        if np.count_nonzero(half) >= 5:
            slope = np.polyfit(zt[half], np.log(dt[half]), 1)[0]
            ok = bool(slope <= -0.95 * min(sigma / D, mu))
    return c, ok


# --------------------------------------------------------------------------
# two-velocity kinetic waves


def _check_parabolic_regime(epsilon: float) -> None:
    if not epsilon > 0:
        raise ModelError("epsilon must be positive")
    if epsilon >= 1:
        raise ModelError(
            f"epsilon={epsilon} >= 1 is the hyperbolic regime: no subsonic traveling wave"
        )


def kinetic_fkpp_speed(epsilon: float) -> float:
    return 2.0 / (1.0 + epsilon * epsilon)


def kinetic_minimal_speed(chi: float, epsilon: float) -> float:
    """Minimal subsonic speed of the two-velocity system (parabolic regime only)."""
    _check_parabolic_regime(epsilon)
    if not chi > 0:
        raise ModelError("chi must be positive")
    if chi * epsilon >= 1:
        raise ModelError("chi must be smaller than 1/epsilon")
    if chi > 1:
        return (chi + 1.0 / chi) / (1.0 + epsilon * epsilon)
    return kinetic_fkpp_speed(epsilon)


def kinetic_decay_roots(sigma: float, epsilon: float) -> Tuple[float, float]:
    """Decay rates ``mu_- <= mu_+`` of the kinetic wave right of the interface."""
    _check_parabolic_regime(epsilon)
    e2 = epsilon * epsilon
    s_fkpp = kinetic_fkpp_speed(epsilon)
    if sigma < s_fkpp * (1 - _SPEED_TOL):
        raise ModelError(f"sigma={sigma} below {s_fkpp}: complex decay roots")
    if not sigma * epsilon < 1:
        raise ModelError("sigma must be subsonic (sigma < 1/epsilon)")
    if abs(sigma - s_fkpp) <= _SPEED_TOL * s_fkpp:
        sigma, disc = s_fkpp, 0.0  # double root: keep round-off out of the square root
    else:
        disc = math.sqrt(max(sigma * sigma * (1 + e2) ** 2 - 4.0, 0.0))
    den = 2.0 * (1.0 - e2 * sigma * sigma)
    mu_plus = (sigma * (1 - e2) + disc) / den
    # product of the roots is c/a = 1/(1 - e2 sigma^2)
    mu_minus = 1.0 / ((1.0 - e2 * sigma * sigma) * mu_plus)
    return mu_minus, mu_plus


def _right_matrix(sigma: float, epsilon: float) -> np.ndarray:
    ie = 1.0 / epsilon
    a, b = ie * ie - 1.0, ie * ie + 1.0
    return 0.5 * np.array(
        [[-a / (ie - sigma), b / (ie - sigma)], [-b / (ie + sigma), a / (ie + sigma)]]
    )


def positivity_margin(chi: float, epsilon: float, sigma: float) -> float:
    """``g(sigma) = mu_+(sigma)(sigma - chi) - 1``; the wave is nonnegative iff ``g >= 0``."""
    _, mu_p = kinetic_decay_roots(sigma, epsilon)
    return mu_p * (sigma - chi) - 1.0


@dataclass(frozen=True)
class KineticWaveProfile:
    """Two-velocity wave; ``rho = (f_plus + f_minus)/2`` equals ``a_left`` on the left.

    Right of the interface ``F(z) = exp(-mu_minus z) (v_slow + z v_lin) + exp(-mu_plus z) v_fast``
    (per unit ``a_left``).
    """

    sigma: float
    chi: float
    epsilon: float
    mu_minus: float
    mu_plus: float
    a_left: float
    v_slow: Tuple[float, float]
    v_fast: Tuple[float, float]
    v_lin: Tuple[float, float] = (0.0, 0.0)

    @property
    def left_state(self) -> Tuple[float, float]:
        ec = self.epsilon * self.chi
        return self.a_left * (1 + ec), self.a_left * (1 - ec)

    def scaled(self, a_left: float) -> "KineticWaveProfile":
        if not a_left > 0:
            raise ModelError("a_left must be positive")
        return KineticWaveProfile(self.sigma, self.chi, self.epsilon, self.mu_minus, self.mu_plus,
                                  float(a_left), self.v_slow, self.v_fast, self.v_lin)

    def _component(self, z, k: int):
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        ec = self.epsilon * self.chi
        left = 1 + ec if k == 0 else 1 - ec
        right = (self.v_slow[k] + self.v_lin[k] * zp) * np.exp(-self.mu_minus * zp) + self.v_fast[
            k
        ] * np.exp(-self.mu_plus * zp)
        return self.a_left * np.where(z <= 0, left, right)

    def f_plus(self, z):
        return self._component(z, 0)

    def f_minus(self, z):
        return self._component(z, 1)

    def rho(self, z):
        return 0.5 * (self.f_plus(z) + self.f_minus(z))


def kinetic_profile(chi: float, epsilon: float, sigma: float, a: float = 1.0) -> KineticWaveProfile:
    """Subsonic two-velocity wave with left state ``a (1 + eps chi, 1 - eps chi)``."""
    _check_parabolic_regime(epsilon)
    if not a > 0:
        raise ModelError("a must be positive")
    s_star = kinetic_minimal_speed(chi, epsilon)
    if abs(sigma - s_star) <= _SPEED_TOL * s_star:
        sigma = s_star
    if sigma < s_star:
        raise ModelError(f"sigma={sigma} below the kinetic minimal speed {s_star}")
    mu_m, mu_p = kinetic_decay_roots(sigma, epsilon)
    ec = epsilon * chi
    f0 = np.array([1 + ec, 1 - ec])
    A = _right_matrix(sigma, epsilon)
    eye = np.eye(2)
    if sigma == kinetic_fkpp_speed(epsilon) or mu_m == mu_p:
        # double root: exp(A z) = exp(-mu z) (I + z (A + mu I))
        mu = 0.5 * (mu_m + mu_p)
        v_lin = (A + mu * eye) @ f0
        return KineticWaveProfile(sigma, chi, epsilon, mu, mu, a, tuple(f0), (0.0, 0.0),
                                  tuple(v_lin))
    lam_slow, lam_fast = -mu_m, -mu_p
    v_slow = (A - lam_fast * eye) @ f0 / (lam_slow - lam_fast)
    v_fast = (A - lam_slow * eye) @ f0 / (lam_fast - lam_slow)
    if sigma == s_star and chi > 1:
        # g(sigma*) = 0: the slow mode vanishes identically
        v_fast = f0.copy()
        v_slow = np.zeros(2)
    if positivity_margin(chi, epsilon, sigma) < -1e-12:  # pragma: no cover - guarded by s_star
        raise ModelError("profile has a negative component")
    return KineticWaveProfile(sigma, chi, epsilon, mu_m, mu_p, a, tuple(v_slow), tuple(v_fast))
