"""Perturbation g = F - f along characteristics, the charge density, and the Picard loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import optimize

from .background import BackgroundProfile, eval_F
from .coulomb import RadialDensity, solve_field_radial
from .reports import ClauseResult, ConditionReport
from .traj import FieldHistory, trace_many, trace_path

if TYPE_CHECKING:
    from .cli.scenario import Scenario

log = logging.getLogger(__name__)

FAMILIES = ("gaussian_bump", "algebraic_r6")
V_CAP_MARGIN = 0.5
# the upper support proxy may approach the quadrature edge no closer than this
V_CAP_GUARD = 0.25


class PicardConvergenceError(RuntimeError):
    def __init__(self, residuals):
        self.residuals = list(residuals)
        super().__init__(f"Picard iteration did not converge; residuals {self.residuals}")


@dataclass(frozen=True)
class InitialPerturbation:
    """g0(x, v) = amplitude * s(|x - c| / scale) * (1 - |v|^2/w^2)^3 for |v| < w.

    s is (1 + r^2)^-3 for algebraic_r6 and exp(-r^2) for gaussian_bump.
    """

    family: str = "algebraic_r6"
    amplitude: float = 0.05
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    spatial_scale: float = 1.0
    velocity_radius: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown perturbation family {self.family!r}")
        if not self.spatial_scale > 0 or not self.velocity_radius > 0:
            raise ValueError("spatial_scale and velocity_radius must be positive")

    def spatial(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - np.asarray(self.center)
        z = np.sum(d * d, axis=-1) / self.spatial_scale**2
        if self.family == "algebraic_r6":
            return (1.0 + z) ** -3
        return np.exp(-z)

    def velocity(self, v) -> np.ndarray:
        u2 = np.sum(np.asarray(v, dtype=float) ** 2, axis=-1) / self.velocity_radius**2
        return np.clip(1.0 - u2, 0.0, None) ** 3

    def g0(self, x, v) -> np.ndarray:
        return self.amplitude * self.spatial(x) * self.velocity(v)

    @property
    def velocity_mass(self) -> float:
        """int (1 - |v|^2/w^2)^3 dv = 64 pi w^3 / 315."""
        return 64.0 * math.pi * self.velocity_radius**3 / 315.0

    def rho0(self, x) -> np.ndarray:
        return self.amplitude * self.spatial(x) * self.velocity_mass


def eval_f0(background: BackgroundProfile, initial: InitialPerturbation, x, v) -> np.ndarray:
    return eval_F(background, v) - initial.g0(x, v)


@dataclass(frozen=True)
class VelocityQuadrature:
    """Tensor Gauss-Legendre rule in (|v|, mu) for integrands symmetric about the x-axis.

    |v| uses two panels, [0, W] and [W, V_cap], so the kink of F at |v| = W sits on
    a panel edge. int h dv = sum_ij 2 pi u_i^2 wu_i wmu_j h(u_i, mu_j).
    """

    u: np.ndarray
    wu: np.ndarray
    mu: np.ndarray
    wmu: np.ndarray
    v_cap: float

    @classmethod
    def build(cls, W: float, v_cap: float, n_u: int, n_mu: int) -> "VelocityQuadrature":
        xa, wa = np.polynomial.legendre.leggauss(n_u)
        xb, wb = np.polynomial.legendre.leggauss(max(4, n_u // 4))
        u = np.concatenate([0.5 * W * (xa + 1.0), W + 0.5 * (v_cap - W) * (xb + 1.0)])
        wu = np.concatenate([0.5 * W * wa, 0.5 * (v_cap - W) * wb])
        mu, wmu = np.polynomial.legendre.leggauss(n_mu)
        return cls(u, wu, mu, wmu, float(v_cap))

    @property
    def weights(self) -> np.ndarray:
        """Weights on the (u, mu) grid, shape (n_u_total, n_mu), including 2 pi u^2."""
        return 2.0 * math.pi * (self.u**2 * self.wu)[:, None] * self.wmu[None, :]

    def velocities(self) -> np.ndarray:
        """Velocity points (u mu, u sqrt(1 - mu^2), 0), shape (n_u_total, n_mu, 3)."""
        s = np.sqrt(1.0 - self.mu**2)
        v = np.zeros((self.u.size, self.mu.size, 3))
        v[..., 0] = self.u[:, None] * self.mu[None, :]
        v[..., 1] = self.u[:, None] * s[None, :]
        return v


@dataclass
class KineticState:
    history: FieldHistory
    background: BackgroundProfile
    initial: InitialPerturbation
    Qg_running: float
    dt: float
    n_u: int = 32
    n_mu: int = 16
    v_cap: float = field(default=0.0)
    extrapolation_exponent: float = 6.0

    def __post_init__(self):
        self.Qg_running = max(self.Qg_running, self.background.W)
        if self.v_cap <= 0.0:
            self.v_cap = self.Qg_running + V_CAP_MARGIN

    @property
    def quadrature(self) -> VelocityQuadrature:
        return VelocityQuadrature.build(self.background.W, self.v_cap, self.n_u, self.n_mu)


def eval_g(state: KineticState, t: float, x, v, with_flags: bool = False):
    """Duhamel formula g(t) = g0(X(0), V(0)) - int_0^t (E + A).grad F(V) ds along backward characteristics."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast_shapes(x.shape, v.shape)[:-1]
    xs = np.broadcast_to(x, shape + (3,)).reshape(-1, 3)
    vs = np.broadcast_to(v, shape + (3,)).reshape(-1, 3)
    if t == 0.0:
        g = state.initial.g0(xs, vs)
        flags = np.zeros(len(xs), dtype=bool)
    else:
        X0, V0, src, flags = trace_many(state.history, t, xs, vs, 0.0, state.dt, state.background)
        g = state.initial.g0(X0, V0) - src
    g = g.reshape(shape)
    return (g, flags.reshape(shape)) if with_flags else g


def eval_f(state: KineticState, t: float, x, v):
    """f(t, x, v) = f0(X(0), V(0)), clipped at 0. Returns (f, largest clipped magnitude)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    shape = np.broadcast_shapes(x.shape, v.shape)[:-1]
    xs = np.broadcast_to(x, shape + (3,)).reshape(-1, 3)
    vs = np.broadcast_to(v, shape + (3,)).reshape(-1, 3)
    if t == 0.0:
        X0, V0 = xs, vs
    else:
        X0, V0, _, _ = trace_many(state.history, t, xs, vs, 0.0, state.dt)
    f = eval_f0(state.background, state.initial, X0, V0)
    clip = float(max(0.0, -f.min())) if f.size else 0.0
    return np.clip(f, 0.0, None).reshape(shape), clip


def sample_g(state: KineticState, t: float, x_nodes) -> tuple[np.ndarray, VelocityQuadrature]:
    """g at (r e_1, v) for every radial node and velocity quadrature point: shape (N, n_u_total, n_mu)."""
    quad = state.quadrature
    r = np.asarray(x_nodes, dtype=float)
    vel = quad.velocities()
    x = np.zeros(r.shape + (1, 1, 3))
    x[..., 0] = r[:, None, None]
    g = eval_g(state, t, x, vel[None])
    return g, quad


def compute_rho(state: KineticState, t: float, x_nodes) -> RadialDensity:
    g, quad = sample_g(state, t, x_nodes)
    rho = np.einsum("nij,ij->n", g, quad.weights)
    return RadialDensity(np.asarray(x_nodes, dtype=float), rho, state.extrapolation_exponent)


def make_probes(background: BackgroundProfile, initial: InitialPerturbation, n: int, seed: int,
                spatial_radius: float | None = None, speed_fraction: float = 0.999):
    """Seeded phase points inside supp f0: |x - c| <= spatial_radius, |v| < support radius of f0."""
    rng = np.random.default_rng(seed)
    radius = 3.0 * initial.spatial_scale if spatial_radius is None else spatial_radius
    support = max(background.W, initial.velocity_radius if initial.amplitude < 0 else 0.0)

    def ball(k, rad):
        d = rng.normal(size=(k, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * (rad * rng.random(k) ** (1.0 / 3.0))[:, None]

    x = np.asarray(initial.center) + ball(n, radius)
    v = ball(n, speed_fraction * support)
    return x, v


def measure_Qf(state: KineticState, t: float, probes) -> float:
    """Running sup of |V(tau)|, tau <= t, over characteristics launched from supp f0 (a lower bound for Q_f)."""
    x, v = probes
    f0 = eval_f0(state.background, state.initial, x, v)
    keep = f0 > 0
    if not np.any(keep):
        return 0.0
    speeds = np.linalg.norm(v[keep], axis=-1)
    if t <= 0.0:
        return float(speeds.max())
    _, _, V, _ = trace_path(state.history, 0.0, x[keep], v[keep], t, state.dt)
    return float(np.linalg.norm(V, axis=-1).max())


def qf_series(state: KineticState, times, probes) -> np.ndarray:
    """Q_f lower bound at each time from one forward path per probe (running max)."""
    times = np.asarray(times, dtype=float)
    x, v = probes
    f0 = eval_f0(state.background, state.initial, x, v)
    keep = f0 > 0
    if not np.any(keep):
        return np.zeros_like(times)
    t_end = float(times.max())
    if t_end <= 0.0:
        return np.full_like(times, np.linalg.norm(v[keep], axis=-1).max())
    s, _, V, _ = trace_path(state.history, 0.0, x[keep], v[keep], t_end, state.dt)
    speed = np.maximum.accumulate(np.linalg.norm(V, axis=-1).max(axis=0))
    idx = np.clip(np.searchsorted(s, times - 1e-12), 0, len(s) - 1)
    return speed[idx]


def f_constancy_drift(state: KineticState, probes, t: float, n_checkpoints: int = 5, floor: float = 1e-8) -> float:
    """max |f(s, X(s), V(s)) - f0(x, v)| / max(f0, floor) along forward characteristics from the probes.

    f(s, .) is re-evaluated from scratch at each checkpoint (a fresh backward trace),
    so this compares two independent routes to the same value.
    """
    x, v = (np.asarray(a, dtype=float).reshape(-1, 3) for a in probes)
    f0 = np.clip(eval_f0(state.background, state.initial, x, v), 0.0, None)
    if t <= 0.0:
        return 0.0
    s, X, V, _ = trace_path(state.history, 0.0, x, v, t, state.dt)
    picks = np.unique(np.linspace(1, len(s) - 1, n_checkpoints).round().astype(int))
    drift = 0.0
    for k in picks:
        f, _ = eval_f(state, float(s[k]), X[:, k], V[:, k])
        drift = max(drift, float(np.max(np.abs(f - f0) / np.maximum(f0, floor))))
    return drift


def check_conditions_II_IV(background: BackgroundProfile, initial: InitialPerturbation, n_samples: int = 4000,
                           seed: int = 0) -> ConditionReport:
    rng = np.random.default_rng(seed)
    scale = initial.spatial_scale
    c = np.asarray(initial.center)
    w = initial.velocity_radius
    vmax = max(background.W, w)
    # spatial samples: log-spaced radii around the centre, random directions; velocities dense in the ball
    radii = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 63)]) * scale
    dirs = rng.normal(size=(radii.size, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    xs = c + radii[:, None] * dirs
    vs = rng.normal(size=(n_samples, 3))
    vs *= (1.2 * vmax * rng.random(n_samples) ** (1 / 3) / np.linalg.norm(vs, axis=1))[:, None]
    vs = np.concatenate([vs, np.zeros((1, 3))])
    f0 = eval_f0(background, initial, xs[:, None, :], vs[None, :, :])
    clauses = []
    fmin = float(f0.min())
    clauses.append(ClauseResult("nonnegative", "pass" if fmin >= -1e-14 else "fail", fmin, "min f0 over samples"))

    h = 1e-6
    pick = rng.choice(vs.shape[0], size=min(200, vs.shape[0]), replace=False)
    xg, vg = np.broadcast_arrays(xs[:, None, :], vs[None, pick, :])
    grads = []
    for k in range(6):
        step = np.zeros(6)
        step[k] = h
        plus = eval_f0(background, initial, xg + step[:3], vg + step[3:])
        minus = eval_f0(background, initial, xg - step[:3], vg - step[3:])
        grads.append((plus - minus) / (2 * h))
    gmax = float(np.max(np.abs(grads)))
    clauses.append(ClauseResult("c1_bounded", "pass" if np.isfinite(gmax) else "fail", gmax,
                                "max |finite-difference gradient| of f0 in (x, v)"))

    outside = vs[np.linalg.norm(vs, axis=1) >= w]
    leak = float(np.abs(initial.g0(xs[:, None, :], outside[None])).max()) if outside.size else 0.0
    ok = leak == 0.0 and w <= background.W + 1.0
    clauses.append(ClauseResult("compact_v_support", "pass" if ok else "fail", w,
                                f"velocity support radius; max |g0| beyond it = {leak!r}"))

    N = tail_crossing(initial) + float(np.linalg.norm(c))
    far = np.linalg.norm(xs, axis=1) > N
    R6 = (1.0 + np.sum(xs[far] ** 2, axis=1)) ** 3
    weighted = np.abs(initial.amplitude) * initial.spatial(xs[far]) * R6
    C = float(weighted.max()) if weighted.size else 0.0
    clauses.append(ClauseResult("far_field_R6", "pass" if np.isfinite(C) else "fail", C,
                                f"sup_{{|x| > N}} |F - f0| R^6 with N = {N!r}"))
    return ConditionReport("II_IV", clauses)


def tail_crossing(initial: InitialPerturbation) -> float:
    """Radius N beyond which |g0| <= |amplitude| R^-6 (measured from the centre)."""
    if initial.family == "algebraic_r6":
        # (1 + r^2/l^2)^-3 <= (1 + r^2)^-3 everywhere when l <= 1; otherwise never (C grows as l^6)
        return 0.0
    lam = initial.spatial_scale

    def gap(r):
        return r * r / lam**2 - 3.0 * math.log1p(r * r)

    # gap < 0 just above 0 when lam^2 > 3; the last sign change is the crossing
    hi = max(10.0, 10.0 * lam)
    while gap(hi) <= 0:
        hi *= 2.0
    grid = np.linspace(1e-9, hi, 4001)
    vals = np.array([gap(r) for r in grid])
    neg = np.nonzero(vals <= 0)[0]
    if neg.size == 0:
        return 0.0
    k = neg[-1]
    return float(optimize.brentq(gap, grid[k], grid[k + 1]))


@dataclass
class PicardResult:
    history: FieldHistory
    state: KineticState
    iterations: int
    residuals: list[float]
    node_times: np.ndarray
    densities: list[RadialDensity]
    v_cap_upper_proxy: float


def _support_upper_proxy(history: FieldHistory, state: KineticState, sample_r: np.ndarray) -> float:
    """W_eff + int_0^T sup |E + A| dt, bounding how far speeds can grow."""
    pts = np.zeros((sample_r.size, 3))
    pts[:, 0] = sample_r
    sups = np.array([np.linalg.norm(history.total_field(t, pts), axis=-1).max() for t in history.times])
    integral = float(np.sum(0.5 * (sups[1:] + sups[:-1]) * np.diff(history.times))) if sups.size > 1 else 0.0
    return state.Qg_running + integral


def picard_solve(scenario: "Scenario") -> PicardResult:
    """Fixed-point loop on the field history.

    Each sweep recomputes rho at every time node by tracing characteristics
    through the current field iterate and solves for the new field. With the
    gauss_seidel scheme (default) each node is written back as soon as it is
    computed, so later nodes already see the updated past; jacobi keeps the
    previous iterate frozen for the whole sweep.
    """
    sc = scenario
    background = sc.background.build()
    initial = sc.perturbation.build(background)
    external = sc.extfield.build()
    dt = sc.time.dt
    M = int(round(sc.time.t_end / dt))
    times = dt * np.arange(M + 1)
    nodes = np.linspace(0.0, sc.grid.r_max, sc.grid.N_r + 1)
    q_ext = sc.grid.extrapolation_exponent

    state0 = KineticState(FieldHistory.zero([0.0], external, nodes), background, initial, background.W, dt,
                          sc.grid.N_u, sc.grid.N_mu, extrapolation_exponent=q_ext)
    rho0 = compute_rho(state0, 0.0, nodes)
    # initial iterate: the field of rho(0) frozen at every time node
    history = FieldHistory(times, [solve_field_radial(rho0, t) for t in times], external)
    state = KineticState(history, background, initial, background.W, dt, sc.grid.N_u, sc.grid.N_mu,
                         extrapolation_exponent=q_ext)
    densities = [rho0] + [None] * M
    residuals: list[float] = []
    sample_r = np.concatenate([nodes[1:], nodes[-1] * np.geomspace(1.0, 10.0, 8)[1:]])
    upper = state.Qg_running
    for it in range(1, sc.picard.max_iter + 1):
        old = history.e_all.copy()
        # the first sweep always runs on the frozen initial iterate
        jacobi = it == 1 or sc.picard.scheme == "jacobi"
        if jacobi:
            frozen = FieldHistory(times, history.states, external)
            trace_state = KineticState(frozen, background, initial, state.Qg_running, dt, sc.grid.N_u,
                                       sc.grid.N_mu, v_cap=state.v_cap, extrapolation_exponent=q_ext)
        else:
            trace_state = state
        for j in range(1, M + 1):
            rho = compute_rho(trace_state, float(times[j]), nodes)
            densities[j] = rho
            history.set_state(j, solve_field_radial(rho, float(times[j])))
        scale = float(np.abs(history.e_all).max())
        diff = float(np.abs(history.e_all - old).max())
        residual = 0.0 if diff == 0.0 else diff / scale
        residuals.append(residual)
        log.info("picard sweep %d residual %r", it, residual)
        upper = _support_upper_proxy(history, state, sample_r)
        if upper > state.v_cap - V_CAP_GUARD:
            # the support may have reached the quadrature edge: widen and keep iterating
            state.v_cap = upper + V_CAP_MARGIN
            log.info("velocity cap widened to %r", state.v_cap)
            continue
        if residual < sc.picard.tol:
            return PicardResult(history, state, it, residuals, times, densities, upper)
    raise PicardConvergenceError(residuals)
