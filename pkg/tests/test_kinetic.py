import math

import numpy as np
import pytest
from scipy import integrate

from conftest import SCENARIOS, gaussian_history, zero_state
from vpbounds.background import BackgroundProfile, eval_F, eval_gradF
from vpbounds.cli.main import uniform_ball_density
from vpbounds.cli.scenario import load_scenario
from vpbounds.coulomb import solve_field_radial
from vpbounds.kinetic import (InitialPerturbation, KineticState, PicardConvergenceError, compute_rho,
                              check_conditions_II_IV, eval_f, eval_f0, eval_g, make_probes, measure_Qf,
                              picard_solve, qf_series, tail_crossing)
from vpbounds.traj import FieldHistory, trace_many

BG = BackgroundProfile(1.0, 1.0)


def harmonic_state(dt, t_end=1.0, rho0=0.01, amplitude=0.05):
    # uniform ball of radius 50: E = w^2 x inside, w^2 = 4 pi rho0 / 3
    dens = uniform_ball_density(50.0, 60.0, 600)
    dens = type(dens)(dens.nodes, rho0 * dens.values)
    times = np.linspace(0.0, t_end, 3)
    hist = FieldHistory(times, [solve_field_radial(dens, t) for t in times])
    init = InitialPerturbation("algebraic_r6", amplitude, (0.0, 0.0, 0.0), 1.0, 1.0)
    return KineticState(hist, BG, init, 1.0, dt), math.sqrt(4 * math.pi * rho0 / 3)


def test_eval_g_at_zero_is_g0():
    st = zero_state()
    rng = np.random.default_rng(0)
    x, v = rng.normal(size=(50, 3)), 0.5 * rng.normal(size=(50, 3))
    assert np.array_equal(eval_g(st, 0.0, x, v), st.initial.g0(x, v))


def test_free_transport():
    st = zero_state()
    rng = np.random.default_rng(1)
    x, v = rng.normal(size=(200, 3)), 0.6 * rng.normal(size=(200, 3))
    g = eval_g(st, 0.7, x, v)
    assert np.abs(g - st.initial.g0(x - 0.7 * v, v)).max() <= 1e-12


def test_vanishes_outside_both_supports():
    st = zero_state()
    g = eval_g(st, 0.5, np.array([[0.2, 0.1, 0.0]]), np.array([[1.5, 0.0, 0.0]]))
    assert g[0] == 0.0


def test_single_step_two_point_trapezoid():
    t = 0.4
    st, _ = harmonic_state(dt=t)
    x = np.array([[0.8, -0.3, 0.2]])
    v = np.array([[0.3, 0.1, -0.2]])
    X0, V0, _, _ = trace_many(st.history, t, x, v, 0.0, t)
    E1 = st.history.total_field(t, x)
    E0 = st.history.total_field(0.0, X0)
    src = 0.5 * t * (np.sum(E1 * eval_gradF(BG, v), -1) + np.sum(E0 * eval_gradF(BG, V0), -1))
    hand = st.initial.g0(X0, V0) - src
    assert eval_g(st, t, x, v) == pytest.approx(hand, rel=1e-13, abs=1e-16)


def test_duhamel_against_exact_characteristics():
    t = 1.0
    x, v = np.array([0.8, -0.3, 0.2]), np.array([0.3, 0.1, -0.2])
    st0, w = harmonic_state(dt=t)

    def XV(s):
        tau = s - t
        return (x * np.cos(w * tau) + v / w * np.sin(w * tau), -x * w * np.sin(w * tau) + v * np.cos(w * tau))

    def integrand(s):
        X, V = XV(s)
        return float(np.dot(w * w * X, eval_gradF(BG, V)))

    src, _ = integrate.quad(integrand, 0.0, t, epsabs=1e-14, epsrel=1e-12)
    X0, V0 = XV(0.0)
    exact = float(st0.initial.g0(X0, V0)) - src
    errs = []
    for dt in (0.04, 0.02, 0.01):
        st, _ = harmonic_state(dt=dt)
        errs.append(abs(float(eval_g(st, t, x[None], v[None])[0]) - exact))
    # the trapezoid time integral dominates: second order
    assert errs[-1] <= 1e-7
    assert min(errs[0] / errs[1], errs[1] / errs[2]) >= 3.5


def test_eval_f_at_zero_is_f0():
    st = zero_state()
    rng = np.random.default_rng(2)
    x, v = rng.normal(size=(40, 3)), 0.5 * rng.normal(size=(40, 3))
    f, clip = eval_f(st, 0.0, x, v)
    assert np.array_equal(f, np.clip(eval_f0(BG, st.initial, x, v), 0, None))
    assert clip == 0.0


def test_eval_f_outside_support_is_zero():
    st, _ = harmonic_state(dt=0.05)
    f, _ = eval_f(st, 1.0, np.array([[0.1, 0.0, 0.0]]), np.array([[2.0, 0.0, 0.0]]))
    assert f[0] == 0.0


def test_f_two_routes_agree():
    errs = []
    for dt in (0.1, 0.05):
        st, _ = harmonic_state(dt=dt)
        rng = np.random.default_rng(3)
        x, v = rng.normal(size=(30, 3)), 0.4 * rng.normal(size=(30, 3))
        f, _ = eval_f(st, 1.0, x, v)
        g = eval_g(st, 1.0, x, v)
        errs.append(np.abs(f - (eval_F(BG, v) - g)).max())
    # trapezoid on the step points: second order
    assert errs[1] <= 1e-4
    assert errs[0] / errs[1] >= 3.0


def test_rho_closed_form_at_zero():
    st = zero_state(n_u=16, n_mu=8)
    r = np.linspace(0, 20, 41)
    rho = compute_rho(st, 0.0, r)
    exact = 0.05 * (1 + r**2) ** -3 * 64 * math.pi / 315
    assert np.max(np.abs(rho.values / exact - 1)) <= 1e-12


def test_rho_zero_for_zero_g():
    st = zero_state(amplitude=0.0)
    assert np.array_equal(compute_rho(st, 0.5, np.linspace(0, 5, 6)).values, np.zeros(6))


def test_rho_bounded_by_Qg_cubed(small_run):
    sc, res = small_run
    st = res.state
    rng = np.random.default_rng(0)
    v = rng.normal(size=(4000, 3))
    f0max = float(np.max(eval_f0(BG, st.initial, np.zeros(3), v * 0.3)))
    C = (max(f0max, 1.0) + 1.0) * 4 * math.pi / 3
    Qg = max(BG.W, st.Qg_running)
    for rho in res.densities:
        assert np.all(np.abs(rho.values) <= C * Qg**3)


def test_zero_amplitude_converges_in_one_sweep():
    sc = load_scenario(SCENARIOS / "zero_amplitude.yaml")
    res = picard_solve(sc)
    assert res.iterations == 1 and res.residuals == [0.0]
    assert np.array_equal(res.history.e_all, np.zeros_like(res.history.e_all))


def test_infinite_tol_is_frozen_field_solve():
    sc = load_scenario(SCENARIOS / "small.yaml")
    sc = sc.model_copy(update={"picard": sc.picard.model_copy(update={"tol": math.inf})})
    res = picard_solve(sc)
    assert res.iterations == 1
    frozen = FieldHistory(res.node_times, [solve_field_radial(res.densities[0], t) for t in res.node_times])
    st = KineticState(frozen, res.state.background, res.state.initial, res.state.background.W, sc.time.dt,
                      sc.grid.N_u, sc.grid.N_mu, v_cap=res.state.v_cap)
    nodes = res.densities[0].nodes
    for j, t in enumerate(res.node_times[1:], start=1):
        assert np.array_equal(compute_rho(st, float(t), nodes).values, res.densities[j].values)


def test_residuals_contract(small_run):
    _, res = small_run
    r = res.residuals
    assert r[-1] < 1e-6
    for k in range(2, len(r) - 1):
        if r[k] > 0:
            assert r[k + 1] <= r[k] / 2


def test_nonconvergence_carries_residuals():
    sc = load_scenario(SCENARIOS / "small.yaml")
    sc = sc.model_copy(update={"picard": sc.picard.model_copy(update={"tol": 1e-300, "max_iter": 2})})
    with pytest.raises(PicardConvergenceError) as err:
        picard_solve(sc)
    assert len(err.value.residuals) == 2


def test_Qf_zero_field():
    st = zero_state()
    probes = make_probes(BG, st.initial, 256, seed=0)
    q0 = measure_Qf(st, 0.0, probes)
    assert 0.99 <= q0 < BG.W
    assert measure_Qf(st, 1.0, probes) == q0
    assert max(BG.W, q0) == BG.W


def test_Qf_bounded_by_field_integral():
    H = gaussian_history()
    init = InitialPerturbation("algebraic_r6", 0.05, (0, 0, 0), 1.0, 1.0)
    st = KineticState(H, BG, init, 1.0, 0.05)
    probes = make_probes(BG, init, 128, seed=1)
    times = np.linspace(0, 2, 5)
    q = qf_series(st, times, probes)
    r = np.linspace(0, 30, 3001)
    pts = np.zeros((r.size, 3))
    pts[:, 0] = r
    c = max(np.linalg.norm(H.total_field(t, pts), axis=-1).max() for t in H.times)
    assert np.all(np.diff(q) >= 0)
    assert np.all(q <= q[0] + c * times + 1e-12)


def test_conditions_algebraic_family():
    init = InitialPerturbation("algebraic_r6", 0.05, (0, 0, 0), 1.0, 1.0)
    rep = check_conditions_II_IV(BG, init)
    assert rep.passed
    assert rep.clause("far_field_R6").measured == pytest.approx(0.05, rel=1e-12)


def test_conditions_gaussian_tail_crossing():
    init = InitialPerturbation("gaussian_bump", 0.05, (0, 0, 0), 1.0, 1.0)
    N = tail_crossing(init)
    assert math.exp(-N * N) * (1 + N * N) ** 3 == pytest.approx(1.0, rel=1e-9)
    rep = check_conditions_II_IV(BG, init)
    assert rep.passed
    assert rep.clause("far_field_R6").measured <= 0.05


def test_conditions_negative_f0_fails():
    init = InitialPerturbation("algebraic_r6", 2.0, (0, 0, 0), 1.0, 1.0)
    rep = check_conditions_II_IV(BG, init)
    assert rep.clause("nonnegative").status == "fail"
