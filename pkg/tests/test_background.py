import numpy as np
import pytest
import sympy as sp

from vpbounds.background import (BackgroundProfile, EnergyFunctionals, check_condition_I, eval_F, eval_gradF,
                                 eval_S, eval_sigma, sigma_closed_form, sigma_quadrature)


@pytest.fixture
def unit():
    return BackgroundProfile(1.0, 1.0)


def symbolic_profile(W=1, kappa=1, power=3):
    u = sp.symbols("u", nonnegative=True)
    F = kappa * (W**2 - u**2) ** power
    return u, F


def test_values_at_reference_points(unit):
    assert eval_F(unit, [2.0, 0.0, 0.0]) == 0.0
    assert eval_F(unit, [0.0, 0.0, 0.0]) == 1.0
    assert eval_F(unit, [1.0, 0.0, 0.0]) == 0.0
    assert unit.dF_R(1.0) == 0.0
    assert unit.d2F_R(1.0) == 0.0


def test_derivatives_match_symbolic():
    u, F = symbolic_profile(W=sp.Rational(3, 2), kappa=2)
    prof = BackgroundProfile(1.5, 2.0)
    for x in [0.0, 0.3, 0.9, 1.2, 1.49]:
        assert prof.F_R(x) == pytest.approx(float(F.subs(u, x)), rel=1e-13, abs=1e-15)
        assert prof.dF_R(x) == pytest.approx(float(sp.diff(F, u).subs(u, x)), rel=1e-12, abs=1e-14)
        assert prof.d2F_R(x) == pytest.approx(float(sp.diff(F, u, 2).subs(u, x)), rel=1e-12, abs=1e-13)
    # C2 matching at u = W: the one-sided limits of F'' from the inside vanish
    assert float(sp.diff(F, u, 2).subs(u, sp.Rational(3, 2))) == 0.0


def test_gradient_examples(unit):
    assert np.array_equal(eval_gradF(unit, [0.0, 0.0, 0.0]), np.zeros(3))
    assert eval_gradF(unit, [0.5, 0.0, 0.0]) == pytest.approx([-27.0 / 16.0, 0.0, 0.0], abs=1e-15)
    for v in ([1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [3.0, -1.0, 2.0]):
        assert np.array_equal(eval_gradF(unit, v), np.zeros(3))


def test_gradient_central_differences_second_order(unit):
    rng = np.random.default_rng(3)
    v = rng.uniform(-0.55, 0.55, size=(50, 3))
    g = eval_gradF(unit, v)

    def fd(d):
        out = np.empty_like(v)
        for k in range(3):
            e = np.zeros(3)
            e[k] = d
            out[:, k] = (eval_F(unit, v + e) - eval_F(unit, v - e)) / (2 * d)
        return np.abs(out - g).max()

    assert fd(1e-2) / fd(5e-3) >= 3.5


def test_F_nonnegative_and_vanishes_outside(unit):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(5000, 3)) * 1.5
    F = eval_F(unit, v)
    assert np.all(F >= 0)
    assert np.all(F[np.linalg.norm(v, axis=1) >= 1.0] == 0.0)


def test_sigma_examples(unit):
    funcs = EnergyFunctionals(unit)
    assert eval_sigma(funcs, 0.0) == 0.0
    assert eval_sigma(funcs, 1.0) == pytest.approx(-0.25, abs=1e-15)
    assert eval_sigma(funcs, 7.0) == pytest.approx(-0.25, abs=1e-15)
    hs = np.linspace(0, 1.2, 200)
    assert np.all(np.diff(eval_sigma(funcs, hs)) <= 0)


def test_sigma_peak_value_scales_as_kappa_W8():
    prof = BackgroundProfile(1.3, 0.7)
    assert sigma_closed_form(prof, prof.peak) == pytest.approx(-0.7 * 1.3**8 / 4, rel=1e-13)


@pytest.mark.parametrize("kind", ["smooth_bump", "c1_bump"])
def test_sigma_closed_form_matches_quadrature(kind):
    prof = BackgroundProfile(1.2, 0.8, kind)
    for h in np.linspace(0.0, prof.peak, 21):
        assert abs(sigma_closed_form(prof, h) - sigma_quadrature(prof, h)) <= 1e-8


def test_S_examples(unit):
    funcs = EnergyFunctionals(unit)
    for eta in (0.0, 0.4, 0.9, 1.5):
        assert eval_S(funcs, unit.F_R(eta), eta) == pytest.approx(0.0, abs=1e-15)
    assert eval_S(funcs, 0.0, 0.0) == pytest.approx(0.25, abs=1e-15)
    assert eval_S(funcs, 0.1, 2.0) >= 0.2


def test_S_lower_bound_beyond_2W(unit):
    funcs = EnergyFunctionals(unit)
    rng = np.random.default_rng(1)
    h = rng.uniform(0, 3, 2000)
    eta = rng.uniform(2, 10, 2000)
    assert np.all(eval_S(funcs, h, eta) >= 0.5 * h * eta**2 - 1e-12)


def test_S_nonnegative_on_samples(unit):
    funcs = EnergyFunctionals(unit)
    h, eta = np.meshgrid(np.linspace(0, 1.5, 61), np.linspace(0, 3, 61))
    assert np.all(eval_S(funcs, h, eta) >= -1e-14)


def test_condition_I_shipped_family_passes(unit):
    rep = check_condition_I(unit)
    assert rep.passed
    assert all(c.status == "pass" for c in rep.clauses)


def test_condition_I_broken_family_fails_c2():
    prof = BackgroundProfile(1.0, 1.0, "c1_bump")
    rep = check_condition_I(prof)
    clause = rep.clause("c2_at_W")
    assert clause.status == "fail"
    assert clause.measured == pytest.approx(8.0, rel=1e-4)


def test_condition_I_nonpositive_kappa_fails():
    rep = check_condition_I(BackgroundProfile(1.0, -1.0))
    failing = {c.name for c in rep.clauses if c.status == "fail"}
    assert "nonnegative" in failing and "concave_at_origin" not in {c.name for c in rep.clauses if c.status == "pass"}
