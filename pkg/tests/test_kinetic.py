from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from goorgrow.core import ModelError, ModelParams, build_grid
from goorgrow.kinetic import (
    KineticState,
    characteristic_polynomial,
    front_state,
    kinetic_step,
    maxwellian_weights,
    relaxation_factor,
    run_kinetic,
    subsonic_wave_exists,
)
from goorgrow.pde import CFLError, SchemeConfig, interface_position
from goorgrow.speedlab import estimate_speed
from goorgrow.waves import decay_roots, kinetic_minimal_speed, minimal_speed


class TestMaxwellian:
    def test_above_threshold_isotropic(self):
        assert maxwellian_weights(0.9, 0.1, 0.5, 0.4, 2.0) == (1.0, 1.0)

    def test_biased_up_the_gradient(self):
        m = maxwellian_weights(0.3, 0.1, 0.5, 0.4, 2.0)
        assert m == pytest.approx((1.8, 0.2))

    def test_biased_down_for_decreasing_nutrient(self):
        assert maxwellian_weights(0.3, -0.1, 0.5, 0.4, 2.0) == pytest.approx((0.2, 1.8))

    def test_round_off_gradient_counts_as_flat(self):
        assert maxwellian_weights(0.3, -1e-17, 0.5, 0.4, 2.0) == pytest.approx((1.8, 0.2))

    def test_bias_limit(self):
        with pytest.raises(ModelError):
            maxwellian_weights(0.3, 0.1, 0.5, 0.5, 2.0)

    @given(st.floats(0, 1), st.floats(-1, 1), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    def test_weights_sum_to_two(self, n, dn, n_th, ec):
        mp, mm = maxwellian_weights(n, dn, n_th, ec, 1.0)
        assert mp + mm == pytest.approx(2.0) and mp > 0 and mm > 0


def _uniform_state(n_cells, fp, fm, nutrient, eps, dz=0.04):
    g = build_grid(0, n_cells * dz, n_cells)
    return KineticState(g.field(np.full(n_cells, fp)), g.field(np.full(n_cells, fm)),
                        g.field(np.full(n_cells, nutrient)), 0.0, eps)


class TestKineticStep:
    def test_collision_relaxes_to_biased_equilibrium(self):
        eps, chi = 0.4, 2.0
        ks = _uniform_state(400, 3.0, 0.5, 0.3, eps)
        p = ModelParams(chi=chi, epsilon=eps, growth_rate=0.0, consumption_rate=0.0)
        cfg = SchemeConfig(eps * ks.grid.dz)
        rho0 = 0.5 * (3.0 + 0.5)
        target = rho0 * (1 + eps * chi)
        dev0 = abs(3.0 - target)
        for _ in range(int(round(5 * eps**2 / cfg.dt))):
            ks = kinetic_step(ks, p, cfg)
        inner = slice(10, 300)  # away from the nutrient boundary layer
        residual = np.max(np.abs(ks.f_plus.values[inner] - target)) / dev0
        assert residual <= math.exp(-5) + 1e-6
        np.testing.assert_allclose(ks.rho.values[inner], rho0, rtol=1e-13)

    def test_relaxation_factor(self):
        assert relaxation_factor(0.0) == 1.0
        assert relaxation_factor(2.0) == 0.0
        for h in (0.01, 0.5, 1.5):
            assert 0 <= relaxation_factor(h) < math.exp(-h)
        with pytest.raises(CFLError):
            relaxation_factor(2.5)

    def test_transport_cfl(self):
        ks = front_state(build_grid(-10, 10, 200), 0.25, 2.0)
        with pytest.raises(CFLError):
            kinetic_step(ks, ModelParams(chi=2.0, epsilon=0.25), SchemeConfig(0.25 * 0.1 * 1.5))

    @given(st.floats(0.5, 3.0), st.sampled_from([0.25, 0.5]), st.sampled_from([1.0, 0.5, 0.3]))
    @settings(max_examples=15, deadline=None)
    def test_conservative_substeps(self, chi, courant, eps_scale):
        eps = 0.3 * eps_scale
        assume(chi * eps < 1)
        g = build_grid(-30, 30, 600)
        z = g.centers
        bump = np.exp(-(z**2))
        ks = KineticState(g.field(1.2 * bump), g.field(0.8 * bump), g.field(0.5 * (1 + np.tanh(z))), 0.0, eps)
        p = ModelParams(chi=chi, epsilon=eps, growth_rate=0.0, consumption_rate=0.0)
        cfg = SchemeConfig(courant * eps * g.dz) if courant != 1.0 else SchemeConfig(eps * g.dz)
        m0 = ks.rho.values.sum()
        for _ in range(30):
            ks = kinetic_step(ks, p, cfg)
        assert abs(ks.rho.values.sum() - m0) <= 1e-10 * m0
        assert np.all(ks.f_plus.values >= 0) and np.all(ks.f_minus.values >= 0)

    def test_exact_shift_moves_by_whole_cells(self):
        g = build_grid(0, 10, 100)
        fp = np.zeros(100)
        fp[20] = 1.0
        ks = KineticState(g.field(fp), g.field(np.zeros(100)), g.field(np.linspace(0.01, 1, 100)), 0.0, 0.5)
        p = ModelParams(chi=1.0, epsilon=0.5, growth_rate=0.0, consumption_rate=0.0)
        out = kinetic_step(ks, p, SchemeConfig(2 * 0.5 * g.dz))  # Courant number 2
        rho = out.rho.values
        assert rho.sum() == pytest.approx(0.5)
        # transport lands at cell 22 before tumbling redistributes in place
        assert np.argmax(rho) == 22

    @pytest.mark.parametrize("dzs", [(0.05, 0.025)])
    def test_wave_stationary_in_moving_frame(self, sims, dzs):
        errors = []
        for dz in dzs:
            prof, ks = sims.kinetic_wave(2.0, 0.4, dz)
            wp = prof.scaled(ks.rho.values[0])
            run = run_kinetic(ks, ModelParams(chi=2.0, epsilon=0.4), SchemeConfig(0.4 * dz), 2.0, record_every=10)
            fin = run.snapshots["kinetic"]
            xbar = interface_position(fin.nutrient, 0.5)
            z = fin.grid.centers
            mask = (z - xbar > -25) & (z - xbar < 40)
            l1 = np.sum(np.abs(fin.rho.values - wp.rho(z - xbar))[mask]) * dz
            errors.append(l1 / wp.a_left)
        t_end = 2.0
        assert errors[0] / t_end <= 2.0 * dzs[0]  # O(dz) per unit time, relative to the plateau
        assert errors[0] / errors[1] >= 1.8

    def test_small_epsilon_recovers_parabolic_speed(self, sims):
        traj = sims.kinetic_front(2.0, 0.01, 0.02, 10.0)
        assert estimate_speed(traj).slope == pytest.approx(minimal_speed(2.0), rel=0.03)


class TestCharacteristicPolynomial:
    def test_double_root_at_kinetic_fkpp_speed(self):
        poly = characteristic_polynomial(1.6, 0.5)
        assert (poly.a, poly.b, poly.c) == pytest.approx((1.44, 4.8, 4.0))
        assert poly.discriminant == pytest.approx(0.0, abs=1e-12)

    def test_hyperbolic_roots_have_positive_real_part(self):
        poly = characteristic_polynomial(0.3, 2.0)
        assert poly(0.0) == poly.c > 0
        assert poly.b < 0
        assert np.all(poly.roots().real > 0)

    def test_parabolic_limit(self):
        eps, sigma = 1e-4, 2.5
        roots = np.sort(characteristic_polynomial(sigma, eps).roots().real)
        mu_m, mu_p = decay_roots(sigma)
        np.testing.assert_allclose(roots, [-mu_p, -mu_m], rtol=1e-6)

    def test_sonic_speed_rejected(self):
        with pytest.raises(ModelError):
            characteristic_polynomial(2.0, 0.5)

    @given(st.floats(1.05, 10.0), st.floats(1e-3, 0.999))
    def test_hyperbolic_regime_never_admits_decay(self, eps, frac):
        sigma = frac / eps
        assert np.all(characteristic_polynomial(sigma, eps).roots().real > 0)


class TestSubsonicExistence:
    @given(st.floats(0.1, 5.0), st.floats(0.001, 0.999))
    def test_hyperbolic_never(self, chi, frac):
        assert subsonic_wave_exists(chi, 2.0, frac / 2.0) is False

    def test_below_minimal_speed(self):
        assert kinetic_minimal_speed(2.0, 0.4) == pytest.approx(2.155, abs=1e-3)
        assert subsonic_wave_exists(2.0, 0.4, 2.0) is False

    def test_at_kinetic_fkpp_speed(self):
        assert subsonic_wave_exists(0.5, 0.4, 2 / 1.16) is True

    def test_at_and_above_minimal_speed(self):
        s = kinetic_minimal_speed(2.0, 0.4)
        assert subsonic_wave_exists(2.0, 0.4, s)
        assert subsonic_wave_exists(2.0, 0.4, s + 0.1)

    def test_supersonic_query_rejected(self):
        with pytest.raises(ModelError):
            subsonic_wave_exists(1.0, 0.4, 3.0)

    @given(st.floats(0.1, 4.0), st.floats(0.02, 0.9), st.floats(0.0, 1.0))
    @settings(max_examples=60)
    def test_threshold_is_the_minimal_speed(self, chi, eps, frac):
        assume(chi * eps < 0.98)
        s_star = kinetic_minimal_speed(chi, eps)
        top = 1 / eps
        assume(top > s_star * 1.01)
        sigma = s_star + frac * 0.98 * (top - s_star)
        assert subsonic_wave_exists(chi, eps, sigma)
        low = s_star * 0.97
        if low * eps < 1:
            assert not subsonic_wave_exists(chi, eps, low)


def test_run_records_mass_and_slope():
    g = build_grid(-20, 60, 1600)
    ks = front_state(g, 0.25, 2.0)
    run = run_kinetic(ks, ModelParams(chi=2.0, epsilon=0.25), SchemeConfig(0.25 * g.dz), 2.0, record_every=8)
    assert run.records[0].time == 0.0
    assert run.records[-1].time == pytest.approx(2.0)
    assert all(math.isnan(r.xdot) for r in run.records)
    assert all(math.isfinite(r.xdot_slope) for r in run.records[1:])
    masses = [r.mass_rho for r in run.records]
    assert masses[-1] > masses[0]  # growth ahead of the plateau
    assert isinstance(run.snapshots["kinetic"], KineticState)
