import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest

from conftest import zero_state
from vpbounds.bounds.bootstrap import bootstrap_iterate, fixed_point_ceiling
from vpbounds.bounds.derivfield import (DerivFieldConstants, derivfield_bound, ln_star, minimize_derivfield_bound,
                                        tail_term)
from vpbounds.bounds.energy import (density_energy_ratio, density_energy_ratio_from, energy_k, energy_total,
                                    tail_energy_check, velocity_moments)
from vpbounds.bounds.exponents import InfeasibleExponents, choose_exponents, field_ratio_check
from vpbounds.bounds.gbu import (GBUParams, gbu_decompose, measured_C1, prelim_inequalities_check,
                                 sigma_ugly_integral)
from vpbounds.bounds.norms import fit_decay_exponent, japanese, weighted_norm
from vpbounds.cli.main import uniform_ball_density
from vpbounds.coulomb import RadialDensity, solve_field_radial
from vpbounds.kinetic import KineticState, make_probes
from vpbounds.traj import FieldHistory, PhaseState

NODES = np.linspace(0.0, 40.0, 401)


def r6_density(scale=1.0):
    return RadialDensity(NODES, scale * japanese(NODES) ** -6)


# weighted norms

def test_norm_weight_cancels():
    rec = weighted_norm(r6_density(), 6)
    assert rec.value == pytest.approx(1.0, rel=1e-14)


def test_norm_lower_weight_peaks_at_origin():
    rec = weighted_norm(r6_density(), 3)
    assert rec.value == 1.0 and rec.argmax_radius == 0.0


def test_norm_of_zero():
    assert weighted_norm(RadialDensity(NODES, np.zeros_like(NODES)), 3.5).value == 0.0


def test_norm_homogeneous():
    base = r6_density()
    rng = np.random.default_rng(0)
    vals = base.values * (1 + 0.3 * rng.random(NODES.size))
    for lam in (0.25, 2.0, 8.0):
        for q in (0.0, 3.0, 3.5, 6.0):
            a = weighted_norm(RadialDensity(NODES, vals), q).value
            b = weighted_norm(RadialDensity(NODES, lam * vals), q).value
            # powers of two scale without rounding
            assert b == lam * a


def test_norm_beyond_tail_exponent_is_infinite():
    assert weighted_norm(r6_density(), 7.0).value == math.inf


# decay fits

def test_fit_exact_power_law():
    r = np.linspace(1, 40, 50)
    assert fit_decay_exponent(r, japanese(r) ** -6) == pytest.approx(6.0, abs=1e-9)


def test_fit_perturbed_power_law():
    r = np.linspace(1, 40, 200)
    assert fit_decay_exponent(r, japanese(r) ** -4 * (1 + 0.01 * np.sin(r))) == pytest.approx(4.0, abs=0.05)


def test_fit_constant():
    assert fit_decay_exponent(np.linspace(1, 10, 10), np.full(10, 3.0)) == pytest.approx(0.0, abs=1e-12)


def test_fit_rejects_nonpositive():
    with pytest.raises(ValueError):
        fit_decay_exponent(np.linspace(1, 10, 10), np.linspace(-1, 1, 10))
    with pytest.raises(ValueError):
        fit_decay_exponent(np.linspace(1, 4, 4), np.ones(4))


# exponent selection

def test_exponents_q3():
    sel = choose_exponents(3)
    assert sel.a == Fraction(31, 36) and sel.b == Fraction(5, 36)
    assert all(sel.constraints().values())


def test_exponents_q4():
    sel = choose_exponents(4)
    assert sel.a == Fraction(53, 72) and sel.b == Fraction(19, 72)
    assert all(sel.constraints().values())


def test_exponent_feasibility_scan():
    limit = Fraction(54, 13)
    for q in [Fraction(k, 2) for k in range(1, 9)] + [Fraction(41, 10), limit, Fraction(21, 5)]:
        if q < limit:
            assert all(choose_exponents(q).constraints().values())
        else:
            with pytest.raises(InfeasibleExponents):
                choose_exponents(q)


def test_exponents_float_threshold():
    with pytest.raises(InfeasibleExponents):
        choose_exponents(54 / 13)


def test_interior_choices():
    sel = choose_exponents(3.5)
    b, a = sel.b, sel.a
    assert sel.m_large == 3 * b / (2 + 3 * b)
    assert sel.n_small == 14 * a / (9 * a + 5)


def test_field_ratios_zero_density():
    times = np.linspace(0, 1, 3)
    dens = RadialDensity(NODES, np.zeros_like(NODES))
    H = FieldHistory(times, [solve_field_radial(dens, t) for t in times])
    pts = np.zeros((20, 3))
    pts[:, 0] = np.linspace(1, 30, 20)
    rep = field_ratio_check(H, 0.5, 3.5, choose_exponents(3.5), pts)
    assert rep.sup_E_ratio == 0.0 and rep.sup_gradE_ratio == 0.0


# field-derivative bound

def test_ln_star_examples():
    assert ln_star(0.5) == 0.5
    assert ln_star(1.0) == 1.0
    assert ln_star(math.e) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(ValueError):
        ln_star(-1.0)


def test_derivfield_zero_density_is_tail():
    assert derivfield_bound(0.0, 0.0, 0.3, 0.5, 10.0) == tail_term(0.3, 10.0, 1.0)


def test_derivfield_d_equals_R():
    c = DerivFieldConstants()
    got = derivfield_bound(0.2, 0.1, 0.3, 5.0, 5.0)
    assert got == pytest.approx(c.C1 * 0.2 + c.C2 * 5.0 * 0.1 + tail_term(0.3, 5.0, 1.0), rel=1e-15)


def test_derivfield_rejects_bad_d():
    with pytest.raises(ValueError):
        derivfield_bound(1.0, 1.0, 1.0, 0.0, 1.0)


def test_derivfield_minimizer_beats_grid():
    opt = minimize_derivfield_bound(0.01, 0.02, 1e-4)
    for R in np.geomspace(0.1, 1e3, 30):
        for d in np.geomspace(1e-3, 1.0, 30) * R:
            assert opt.bound <= derivfield_bound(0.01, 0.02, 1e-4, d, R) * (1 + 1e-9)


# ugly integral

def test_sigma_ugly_examples():
    assert sigma_ugly_integral(4.0, 1.0) == pytest.approx(4.0, rel=1e-6)
    assert sigma_ugly_integral(16.0, 2.0) == pytest.approx(0.5, rel=1e-6)
    assert sigma_ugly_integral(8.0, 1.0) == pytest.approx(0.5 * sigma_ugly_integral(4.0, 1.0), rel=1e-9)


# appendix bootstrap

def test_bootstrap_constant_Q():
    Qs, C2, T1, t0 = 3.0, 0.7, 0.5, 2.0
    res = bootstrap_iterate([0.0, 3.0], [Qs, Qs], C2, T1, t0)
    L = Qs ** (-41 / 60) / (4 * C2)
    assert all(x == pytest.approx(L, rel=1e-15) for x in res.lengths)
    assert res.k == math.ceil((t0 - T1) * 4 * C2 * Qs ** (41 / 60))
    assert res.uniform_lower_bound == pytest.approx(L, rel=1e-15)
    assert all(res.checks.values())


def test_bootstrap_ceiling():
    assert fixed_point_ceiling(1.0, 2.0) == pytest.approx(2**7.5, rel=1e-2)
    res = bootstrap_iterate([0.0, 3.0], [1.0, 2.0], 1.0, 0.5, 2.0)
    assert res.ceiling_closed_form == pytest.approx(2**7.5, rel=1e-12)


def test_bootstrap_degenerate():
    res = bootstrap_iterate([0.0, 3.0], [1.0, 2.0], 1.0, 2.0, 1.5)
    assert res.k == 0 and res.bound == pytest.approx(5.0 / 3.0)


def test_bootstrap_rejects_decreasing():
    with pytest.raises(ValueError):
        bootstrap_iterate([0.0, 1.0], [2.0, 1.0], 1.0, 0.1, 0.9)


def test_bootstrap_lengths_above_bound_growing_Q():
    t = np.linspace(0, 3, 31)
    res = bootstrap_iterate(t, 1 + t**2, 0.5, 0.2, 2.8)
    assert all(L >= res.uniform_lower_bound for L in res.lengths)
    assert res.k <= res.k_ceiling


# energy

def _dense_energy_oracle(amplitude):
    # f0 = (1 - s)(1 - u^2)^3 with s = amplitude R^-6 separates, and for F(u) = (1 - u^2)^3
    # S(f, u) integrates in closed form: k(r) = 4 pi U [s + 3/4 ((1 - s)^(4/3) - 1)]
    mp.mp.dps = 30
    a = mp.mpf(amplitude)
    U = mp.quad(lambda u: u**2 * (1 - u**2) ** 4, [0, 1])

    def k(r):
        s = a * (1 + r * r) ** -3
        return 4 * mp.pi * U * (s + mp.mpf(3) / 4 * ((1 - s) ** (mp.mpf(4) / 3) - 1))

    return float(mp.quad(lambda r: 4 * mp.pi * r * r * k(r), [0, 1, 4, 16, mp.inf]))


def _energy_state(amplitude=0.05):
    base = zero_state(amplitude=amplitude)
    return KineticState(FieldHistory.zero([0.0], None, NODES), base.background, base.initial, 1.0, 0.02)


def test_energy_total_matches_closed_form():
    st = _energy_state()
    assert energy_total(st, 0.0) == pytest.approx(_dense_energy_oracle(0.05), rel=1e-6)


def test_energy_zero_for_background():
    st = _energy_state(0.0)
    assert np.array_equal(energy_k(st, 0.0, np.array([[0.0, 0, 0], [3.0, 0, 0]])), np.zeros(2))
    assert energy_total(st, 0.0) == 0.0


def test_k_nonnegative():
    st = _energy_state()
    pts = np.zeros((NODES.size, 3))
    pts[:, 0] = NODES
    assert np.all(energy_k(st, 0.0, pts) >= 0)
    m = velocity_moments(st, 0.0, NODES)
    # raw sums only dip below zero by cancellation noise
    assert m.k.min() >= -m.k_noise


def test_conslaw_ratio_zero_g():
    st = _energy_state(0.0)
    rep = density_energy_ratio(st, 0.0, NODES[:50])
    assert rep.sup_ratio == 0.0


def test_conslaw_ratio_rejects_rho_without_energy():
    with pytest.raises(AssertionError):
        density_energy_ratio_from([1e-3, 0.5], [0.0, 1.0])


def test_conslaw_ratio_finite_at_start():
    rep = density_energy_ratio(_energy_state(), 0.0, NODES)
    assert 0 < rep.sup_ratio < math.inf and rep.n_resolved > 10


def test_tail_energy_above_support():
    st = _energy_state()
    lhs, rhs = tail_energy_check(st, 0.0, P_cut=max(2.0, st.v_cap))
    assert lhs == 0.0 and rhs > 0


def test_tail_energy_background_only():
    lhs, rhs = tail_energy_check(_energy_state(0.0), 0.0, P_cut=2.0)
    assert lhs == 0.0 and rhs == 0.0


def test_tail_energy_rejects_low_cut():
    with pytest.raises(ValueError):
        tail_energy_check(_energy_state(), 0.0, P_cut=1.5)


# GBU

def test_gbu_params_invariants():
    for Qf, C0, C1 in [(0.0, 0.0, 0.01), (1.0, 0.0, 0.2), (3.0, 0.5, 0.1), (10.0, 2.0, 1.0)]:
        p = GBUParams.build(Qf, 1.0, C0, C1)
        assert all(p.invariants(1.0).values())
        assert p.P == pytest.approx(p.Q ** 0.65, rel=1e-15)
        assert p.R_gbu == pytest.approx(p.Q ** (-32 / 15), rel=1e-15)


def test_gbu_params_without_applied_field():
    p = GBUParams.build(1.0, 1.0, 0.0, 0.25)
    assert p.C2 == 0.25
    assert GBUParams.build(1.0, 1.0, 0.0, 0.0).Delta == math.inf


def test_gbu_zero_g():
    st = zero_state(amplitude=0.0)
    p = GBUParams.build(1.0, 1.0, 0.0, 0.0)
    res = gbu_decompose(st, PhaseState((0.5, 0, 0), (0.3, 0, 0)), 0.5, p, n_samples=600)
    assert (res.I_G, res.I_B, res.I_U, res.I_total) == (0.0, 0.0, 0.0, 0.0)
    assert res.truncated and res.delta_used == 0.5


def test_gbu_slow_velocities_are_all_good():
    st = zero_state()
    p = GBUParams.build(1.0, 1.0, 0.0, 0.0)
    assert p.P > st.v_cap
    res = gbu_decompose(st, PhaseState((0.5, 0, 0), (0.3, 0, 0)), 0.5, p, n_samples=600)
    assert res.I_B == 0.0 and res.I_U == 0.0 and res.I_G > 0


def _ball_history(t_end=5.0):
    dens = uniform_ball_density(40.0, 60.0, 600)
    dens = RadialDensity(dens.nodes, 0.01 * dens.values)
    times = np.linspace(0, t_end, 11)
    return FieldHistory(times, [solve_field_radial(dens, t) for t in times])


def test_prelim_zero_field_drift():
    st = zero_state()
    p = GBUParams.build(1.0, 1.0, 0.0, 0.0)
    probes = make_probes(st.background, st.initial, 100, seed=0)
    rep = prelim_inequalities_check(st, probes, p, 1.0, PhaseState((0.5, 0, 0), (0.3, 0, 0)))
    assert rep.passed and rep.max_drift_over_P == 0.0


def test_prelim_inflated_window_violates_drift():
    H = _ball_history()
    st0 = zero_state()
    st = KineticState(H, st0.background, st0.initial, 1.0, 0.05)
    Q = GBUParams.build(1.0, 1.0, 0.0, 1.0).Q
    p = GBUParams.build(1.0, 1.0, 0.0, measured_C1(st, 5.0, Q))
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 3))
    x *= (35.0 * rng.random(200) ** (1 / 3) / np.linalg.norm(x, axis=1))[:, None]
    v = 0.5 * rng.normal(size=(200, 3))
    probe = PhaseState((1.0, 0, 0), (0.3, 0.2, 0))
    assert prelim_inequalities_check(st, (x, v), p, 5.0, probe).passed
    inflated = prelim_inequalities_check(st, (x, v), p, 5.0, probe, delta_scale=10.0)
    assert inflated.violations["drift_quarter_P"] > 0
