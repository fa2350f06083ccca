"""Good/Bad/Ugly split of the time-integrated field along one characteristic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ..coulomb import RadialDensity
from ..kinetic import KineticState, eval_g
from ..traj import PhaseState, trace_many, trace_path
from .energy import velocity_moments


@dataclass(frozen=True)
class GBUParams:
    """Q, P = Q^(13/20), Delta = P / (4 C2 Q^(4/3)), R = Q^(-32/15) and the field constants.

    C2 = C0^(-7/13) + C1. When the applied field vanishes (C0 = 0) the C0 term
    never enters the field bound, so C2 = C1.
    """

    Q: float
    P: float
    Delta: float
    R_gbu: float
    C0: float
    C1: float
    C2: float

    @classmethod
    def build(cls, Qf: float, W: float, C0: float, C1: float) -> "GBUParams":
        if Qf < 0 or W <= 0 or C0 < 0 or C1 < 0:
            raise ValueError("need Qf >= 0, W > 0 and nonnegative field constants")
        Q = max((2.0 * W) ** (4.0 / 3.0), C0) ** (15.0 / 13.0) + Qf
        P = Q ** (13.0 / 20.0)
        C2 = (C0 ** (-7.0 / 13.0) if C0 > 0 else 0.0) + C1
        Delta = P / (4.0 * C2 * Q ** (4.0 / 3.0)) if C2 > 0 else math.inf
        return cls(Q, P, Delta, Q ** (-32.0 / 15.0), C0, C1, C2)

    def invariants(self, W: float) -> dict[str, bool]:
        out = {"P_at_least_2W": self.P >= 2.0 * W * (1.0 - 1e-12), "Delta_positive": self.Delta > 0}
        if math.isfinite(self.Delta):
            # P / Q^(4/3) = Q^(-41/60)
            lhs = 4.0 * self.C2 * self.Delta
            out["exponent_identity"] = math.isclose(lhs, self.Q ** (-41.0 / 60.0), rel_tol=1e-12)
        return out


def measured_C1(state: KineticState, t: float, Q: float) -> float:
    """sup_{tau <= t, x} |E(tau, x)| / Q^(4/3) over the stored nodes."""
    h = state.history
    rows = h.times <= t + 1e-12
    if h.mode == "radial":
        sup = float(np.abs(h.e_all[rows]).max())
    else:
        sup = float(np.linalg.norm(h.grid_all[rows], axis=-1).max())
    return sup / Q ** (4.0 / 3.0)


def sigma_ugly_integral(P: float, R_gbu: float) -> float:
    """int over the real line of Sigma((P/4)^2 tau^2), Sigma(r) = R^-2 for r <= R^2 and 1/r beyond."""
    if not (P > 0 and R_gbu > 0):
        raise ValueError("P and R must be positive")
    c = (P / 4.0) ** 2
    knee = R_gbu / math.sqrt(c)

    def sigma(tau):
        r = c * tau * tau
        return 1.0 / R_gbu**2 if r <= R_gbu**2 else 1.0 / r

    inner, _ = integrate.quad(sigma, 0.0, knee, epsabs=0.0, epsrel=1e-12)
    outer, _ = integrate.quad(sigma, knee, math.inf, epsabs=0.0, epsrel=1e-12)
    return 2.0 * (inner + outer)


@dataclass
class GBUResult:
    I_G: float
    I_B: float
    I_U: float
    I_total: float
    se_G: float
    se_B: float
    se_U: float
    se_sum: float
    delta_used: float
    truncated: bool
    ratios: dict[str, float]
    n_samples: int
    # phase points (x, v) at time t of the sampled characteristics, for the preliminary checks
    phase_points: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)

    @property
    def partition_gap(self) -> float:
        return abs(self.I_G + self.I_B + self.I_U - self.I_total)


def _sphere(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _ball(rng, n, radius):
    return _sphere(rng, n) * (radius * rng.random(n) ** (1.0 / 3.0))[:, None]


def _shell_average_integral(rho: RadialDensity, a: float, ell_max: float, R_split: float) -> float:
    """int_0^ell_max d(ell) int_{S^2} rho(|X + ell w|) dw for |X| = a.

    The angular integral is (2 pi / (a ell)) int_{|a - ell|}^{a + ell} rho(r) r dr.
    """
    r_hi = a + ell_max
    grid = np.linspace(0.0, r_hi, 40001)
    vals = rho.value(grid) * grid
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(grid))])

    def prim(r):
        return np.interp(r, grid, cum)

    def angular(ell):
        ell = np.asarray(ell, dtype=float)
        if a == 0.0:
            return 4.0 * math.pi * rho.value(ell)
        small = ell < 1e-9
        safe = np.where(small, 1.0, ell)
        out = 2.0 * math.pi * (prim(a + safe) - prim(np.abs(a - safe))) / (a * safe)
        return np.where(small, 4.0 * math.pi * rho.value(np.full_like(ell, a)), out)

    edges = np.unique(np.concatenate([np.linspace(0.0, ell_max, 801), [R_split, a]]))
    edges = edges[(edges >= 0) & (edges <= ell_max)]
    x, w = np.polynomial.legendre.leggauss(8)
    lo, hi = edges[:-1, None], edges[1:, None]
    ell = (0.5 * (hi - lo) * (x + 1.0) + lo).ravel()
    wl = (0.5 * (hi - lo) * w).ravel()
    return float(wl @ angular(ell))


def gbu_decompose(state: KineticState, probe: PhaseState, t: float, params: GBUParams, n_samples: int = 20000,
                  seed: int = 0, n_time: int = 6, inner_fraction: float = 0.2,
                  ell_max: float | None = None) -> GBUResult:
    """I_G, I_B, I_U of int_{t-Delta}^t int int |g(s, y, w)| / |y - Xhat(s)|^2 dw dy ds.

    Points are parametrised as y = Xhat(s) + ell w_dir, so the kernel cancels
    against ell^2 d(ell). Time uses a Gauss-Legendre rule; at each time node
    ell is stratified at R (uniform inside, Cauchy-weighted outside), the
    direction is uniform and the velocity uniform in |w| <= V_cap. Membership
    uses v = V(t, s, y, w) from a forward trace. I_total is computed separately
    from int |g| dw on the radial nodes.
    """
    h = state.history
    dt = state.dt
    delta = min(params.Delta, t)
    truncated = params.Delta > t
    ell_max = float(h.nodes[-1]) if ell_max is None else ell_max
    R = params.R_gbu
    if R >= ell_max:
        raise ValueError("R_gbu must be smaller than the sampling radius")
    P = params.P
    v_cap = state.v_cap
    ball_vol = 4.0 * math.pi * v_cap**3 / 3.0
    rng = np.random.default_rng(seed)
    sx, sw = np.polynomial.legendre.leggauss(n_time)
    s_nodes = t - delta + 0.5 * delta * (sx + 1.0)
    s_w = 0.5 * delta * sw

    Vhat_t = np.asarray(probe.v)
    n_per = max(n_samples // n_time, 20)
    n_in = max(int(inner_fraction * n_per), 10)
    n_out = n_per - n_in
    atan_R, atan_L = math.atan(R), math.atan(ell_max)

    est = np.zeros(3)
    var = np.zeros(3)
    var_sum = 0.0
    total = 0.0
    xs_keep, vs_keep = [], []
    for s, ws in zip(s_nodes, s_w):
        Xh, _, _, _ = trace_many(h, t, [probe.x], [probe.v], s, dt)
        Xh = Xh[0]
        # inner stratum: ell uniform on [0, R]
        ell_in = R * rng.random(n_in)
        # outer stratum: density proportional to 1 / (1 + ell^2) on [R, ell_max]
        ell_out = np.tan(atan_R + (atan_L - atan_R) * rng.random(n_out))
        ell = np.concatenate([ell_in, ell_out])
        y = Xh + ell[:, None] * _sphere(rng, n_per)
        w = _ball(rng, n_per, v_cap)
        weight = np.concatenate([np.full(n_in, R), (1.0 + ell_out**2) * (atan_L - atan_R)]) * 4.0 * math.pi * ball_vol
        gabs = np.abs(eval_g(state, s, y, w))
        x_t, v_t, _, _ = trace_many(h, s, y, w, t, dt)
        good = (np.linalg.norm(v_t, axis=1) < P) | (np.linalg.norm(v_t - Vhat_t, axis=1) < P)
        near = ell < R
        masks = [good, ~good & near, ~good & ~near]
        vals = gabs * weight
        strata = [slice(0, n_in), slice(n_in, n_per)]
        for k, m in enumerate(masks):
            for st in strata:
                part = np.where(m[st], vals[st], 0.0)
                est[k] += ws * part.mean()
                var[k] += ws**2 * part.var(ddof=1) / part.size
        for st in strata:
            var_sum += ws**2 * vals[st].var(ddof=1) / vals[st].size
        xs_keep.append(x_t)
        vs_keep.append(v_t)

        nodes = h.nodes
        moments = velocity_moments(state, float(s), nodes)
        rho_abs = RadialDensity(nodes, moments.abs_g, state.extrapolation_exponent)
        total += ws * _shell_average_integral(rho_abs, float(np.linalg.norm(Xh)), ell_max, R)

    I_G, I_B, I_U = (float(v) for v in est)
    ratios = {
        "good": I_G / (delta * P ** (4.0 / 3.0)) if delta > 0 else 0.0,
        "bad": I_B / (delta * params.Q**3 * R) if delta > 0 else 0.0,
        "ugly": I_U * R * P**3,
    }
    se = np.sqrt(var)
    return GBUResult(I_G, I_B, I_U, float(total), float(se[0]), float(se[1]), float(se[2]), float(math.sqrt(var_sum)),
                     float(delta), bool(truncated), ratios, n_per * n_time,
                     (np.concatenate(xs_keep), np.concatenate(vs_keep)))


@dataclass(frozen=True)
class PrelimReport:
    violations: dict[str, int]
    checked: dict[str, int]
    max_drift_over_P: float
    delta_used: float

    @property
    def passed(self) -> bool:
        return all(v == 0 for v in self.violations.values())


def prelim_inequalities_check(state: KineticState, probes, params: GBUParams, t: float, probe: PhaseState,
                              delta_scale: float = 1.0) -> PrelimReport:
    """Check the four velocity inequalities on [t - Delta, t] along each probe's backward path.

    (1) |V(s) - v| <= P/4; (2) |v| < P implies |V(s)| < 2P; (3) |v - Vhat(t)| < P
    implies |V(s) - Vhat(s)| < 2P; (4) |v| > P implies |V(s)| > 3P/4 > W.
    probes are (x, v) at time t; probe is the reference characteristic (Xhat, Vhat) at t.
    """
    x, v = (np.asarray(a, dtype=float).reshape(-1, 3) for a in probes)
    delta = min(delta_scale * params.Delta, t)
    P = params.P
    W = state.background.W
    h = state.history
    _, _, V, _ = trace_path(h, t, x, v, t - delta, state.dt)
    _, _, Vh, _ = trace_path(h, t, [probe.x], [probe.v], t - delta, state.dt)
    speed0 = np.linalg.norm(v, axis=1)
    drift = np.linalg.norm(V - v[:, None, :], axis=-1).max(axis=1)
    speed = np.linalg.norm(V, axis=-1)
    rel = np.linalg.norm(V - Vh, axis=-1).max(axis=1)
    slow = speed0 < P
    near = np.linalg.norm(v - np.asarray(probe.v), axis=1) < P
    fast = speed0 > P
    violations = {
        "drift_quarter_P": int(np.sum(drift > 0.25 * P)),
        "slow_stays_below_2P": int(np.sum(speed[slow].max(axis=1) >= 2.0 * P)) if slow.any() else 0,
        "near_stays_within_2P": int(np.sum(rel[near] >= 2.0 * P)),
        "fast_stays_above_3P_4": int(np.sum(speed[fast].min(axis=1) <= 0.75 * P)) + int(fast.any() and 0.75 * P <= W),
    }
    checked = {"drift_quarter_P": int(x.shape[0]), "slow_stays_below_2P": int(slow.sum()),
               "near_stays_within_2P": int(near.sum()), "fast_stays_above_3P_4": int(fast.sum())}
    return PrelimReport(violations, checked, float(drift.max() / P) if drift.size else 0.0, float(delta))
