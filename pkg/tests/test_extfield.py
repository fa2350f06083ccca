import numpy as np
import pytest

from vpbounds.extfield import (ExternalField, check_condition_III, default_sample_grid, eval_A, eval_gradA,
                               measured_C0, smoothstep, smoothstep_deriv)

DIPOLE = ExternalField("dipole", 1.0, (0.0, 0.0, 1.0))
TAIL = ExternalField("coulomb_tail", 1.0, cutoff_radius=1.0)
ZERO = ExternalField()


def fd_jacobian(field, x, d):
    J = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = d
        J[:, j] = (eval_A(field, 0.0, x + e) - eval_A(field, 0.0, x - e)) / (2 * d)
    return J


def test_zero_family_is_exactly_zero():
    x = np.random.default_rng(0).normal(size=(20, 3))
    assert np.array_equal(eval_A(ZERO, 0.3, x), np.zeros_like(x))
    assert np.array_equal(eval_gradA(ZERO, 0.3, x), np.zeros((20, 3, 3)))


def test_dipole_value():
    assert eval_A(DIPOLE, 0.0, [1.0, 0.0, 0.0]) == pytest.approx([0.0, 2**-1.5, 0.0], abs=1e-16)


def test_coulomb_tail_value():
    assert eval_A(TAIL, 0.0, [10.0, 0.0, 0.0]) == pytest.approx([0.01, 0.0, 0.0], abs=1e-17)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        ExternalField("quadrupole")


@pytest.mark.parametrize("field", [DIPOLE, TAIL])
def test_gradient_second_order(field):
    rng = np.random.default_rng(4)
    pts = [np.array([1.0, 0.0, 0.0])] + list(rng.normal(size=(8, 3)) * 1.5)
    for x in pts:
        J = eval_gradA(field, 0.0, x)
        e1 = np.abs(fd_jacobian(field, x, 1e-2) - J).max()
        e2 = np.abs(fd_jacobian(field, x, 5e-3) - J).max()
        assert e2 <= 1e-9 or e1 / e2 >= 3.5


def test_dipole_trace_vanishes():
    x = default_sample_grid(n_radii=12, n_dirs=16)
    J = eval_gradA(DIPOLE, 0.0, x)
    assert np.abs(np.trace(J, axis1=-2, axis2=-1)).max() <= 1e-15


def test_smoothstep_ends():
    assert smoothstep(0.5, 1.0) == 0.0 and smoothstep(1.0, 1.0) == 1.0
    assert smoothstep_deriv(0.5, 1.0) == 0.0 and smoothstep_deriv(1.0, 1.0) == 0.0


def test_condition_III_zero():
    rep = check_condition_III(ZERO)
    assert all(c.status == "pass" and c.measured == 0.0 for c in rep.clauses)


def test_condition_III_dipole_far_field_deviates():
    rep = check_condition_III(DIPOLE, p=3.5)
    assert rep.clause("decay_A").status == "pass"
    assert rep.clause("decay_gradA").status == "pass"
    assert rep.clause("divergence_free").status == "pass"
    assert rep.clause("far_field").status == "deviates"


def test_condition_III_coulomb_tail_divergence_deviates():
    grid = default_sample_grid(r_min=0.3, r_max=100.0)
    rep = check_condition_III(TAIL, grid)
    assert rep.clause("far_field").status == "pass"
    clause = rep.clause("divergence_free")
    assert clause.status == "deviates"
    r = np.linalg.norm(grid, axis=-1)
    expected = np.max(np.abs(TAIL.amplitude * smoothstep_deriv(r, 1.0) / r**2))
    assert clause.measured == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("field", [ZERO, DIPOLE, TAIL])
def test_C0_is_the_weighted_sup(field):
    grid = default_sample_grid()
    r2 = 1.0 + np.sum(grid * grid, axis=-1)
    sup = float(np.max(np.linalg.norm(eval_A(field, 0.0, grid), axis=-1) * r2))
    assert np.isfinite(sup)
    assert measured_C0(field) == pytest.approx(sup, rel=1e-14, abs=0.0)
