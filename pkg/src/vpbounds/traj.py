"""Characteristics dX/ds = V, dV/ds = -(E + A)(s, X) through a stored field history."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .coulomb import FieldState, RadialDensity, solve_field_radial
from .extfield import KIND_CODES, ExternalField
from .reports import ClauseResult, ConditionReport

TIME_EPS = 1e-12


@dataclass(frozen=True)
class PhaseState:
    x: tuple[float, float, float]
    v: tuple[float, float, float]

    def __post_init__(self):
        x = tuple(float(c) for c in self.x)
        v = tuple(float(c) for c in self.v)
        if len(x) != 3 or len(v) != 3 or not all(math.isfinite(c) for c in x + v):
            raise ValueError("phase state needs finite 3-vectors")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def xv(self) -> np.ndarray:
        return np.array(self.x + self.v)


@dataclass(frozen=True)
class TraceResult:
    state: PhaseState
    extrapolated: bool


class FieldHistory:
    """Field snapshots E(t_k) plus the applied field A; linear in time between snapshots.

    Snapshots are packed into contiguous arrays for the compiled tracer. The
    Picard loop overwrites snapshots between sweeps through set_state; no
    writes happen while traces are running.
    """

    def __init__(self, times, states: list[FieldState], external: ExternalField | None = None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size != len(states) or times.size == 0:
            raise ValueError("one field state per time is required")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        modes = {s.mode for s in states}
        if len(modes) != 1:
            raise ValueError("all snapshots must share one mode")
        self.times = times
        steps = np.diff(times)
        self.inv_dt = 1.0 / float(steps[0]) if steps.size and np.allclose(steps, steps[0], rtol=1e-12, atol=0.0) else 0.0
        self.external = external or ExternalField()
        self.mode = modes.pop()
        first = states[0]
        M = times.size
        if self.mode == "radial":
            self.nodes = first.nodes
            self.inv_h = first.inv_h
            self.tail_r = first.tail_r
            self.q_ext = first.q_ext
            self.e_all = np.zeros((M, first.nodes.size))
            self.de_all = np.zeros_like(self.e_all)
            self.tailq_all = np.zeros((M, first.tail_r.size))
            self.rho_tail_all = np.zeros(M)
            self.origin = np.zeros(3)
            self.spacing = 1.0
            self.grid_all = np.zeros((1, 2, 2, 2, 3))
            self.qtot_all = np.zeros(1)
        else:
            self.nodes = np.zeros(2)
            self.inv_h = 0.0
            self.tail_r = np.ones(2)
            self.q_ext = 6.0
            self.e_all = np.zeros((1, 2))
            self.de_all = np.zeros((1, 2))
            self.tailq_all = np.zeros((1, 2))
            self.rho_tail_all = np.zeros(1)
            self.origin = first.origin
            self.spacing = first.spacing
            self.grid_all = np.zeros((M,) + first.grid.shape)
            self.qtot_all = np.zeros(M)
        self._states = [None] * M
        for k, s in enumerate(states):
            self.set_state(k, s)

    @classmethod
    def zero(cls, times, external: ExternalField | None = None, nodes=None) -> "FieldHistory":
        nodes = np.linspace(0.0, 1.0, 2) if nodes is None else np.asarray(nodes, dtype=float)
        states = [solve_field_radial(RadialDensity(nodes, np.zeros_like(nodes)), t) for t in np.asarray(times, float)]
        return cls(times, states, external)

    @property
    def states(self) -> list[FieldState]:
        return list(self._states)

    def set_state(self, k: int, state: FieldState) -> None:
        if state.mode != self.mode:
            raise ValueError("snapshot mode mismatch")
        if self.mode == "radial":
            if state.nodes.shape != self.nodes.shape or not np.array_equal(state.nodes, self.nodes):
                raise ValueError("radial snapshots must share the node grid")
            self.e_all[k] = state.e
            self.de_all[k] = state.de
            self.tailq_all[k] = state.tail_q
            self.rho_tail_all[k] = state.rho_tail
        else:
            self.grid_all[k] = state.grid
            self.qtot_all[k] = state.q_total
        self._states[k] = state

    def covers(self, t0: float, t1: float) -> bool:
        lo, hi = min(t0, t1), max(t0, t1)
        return lo >= self.times[0] - TIME_EPS and hi <= self.times[-1] + TIME_EPS

    def _require(self, t0, t1):
        if not self.covers(t0, t1):
            raise ValueError(f"interval [{min(t0, t1)}, {max(t0, t1)}] is outside the stored history "
                             f"[{self.times[0]}, {self.times[-1]}]")

    def field_args(self) -> tuple:
        ext = self.external
        return (self.times, self.inv_dt, 0 if self.mode == "radial" else 1,
                self.nodes, self.inv_h, self.e_all, self.de_all, self.tail_r, self.tailq_all,
                self.rho_tail_all, self.q_ext, math.sqrt(1.0 + float(self.nodes[-1]) ** 2),
                self.origin, self.spacing, self.grid_all, self.qtot_all,
                KIND_CODES[ext.kind], np.asarray(ext.moment, dtype=float), float(ext.a_of_t(0.0)),
                float(ext.cutoff_radius))

    def total_field(self, t, x) -> np.ndarray:
        """E + A at (t, x) for an array of points."""
        x = np.asarray(x, dtype=float)
        pts = np.ascontiguousarray(x.reshape(-1, 3))
        ts = np.broadcast_to(np.asarray(t, dtype=float), (len(pts),)).copy()
        out, _ = _kernels.field_at(ts, pts, *self.field_args())
        return out.reshape(x.shape)


def n_steps(t0: float, t1: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    span = abs(t1 - t0)
    return max(1, int(math.ceil(span / dt - 1e-9))) if span > 0 else 0


def trace_many(history: FieldHistory, from_time: float, x, v, to_time: float, dt: float,
               background=None):
    """Vectorised trace. Returns (X, V, source_integral, extrapolated flags).

    source_integral is int_{to}^{from} (E + A)(s, X(s)) . grad F(V(s)) ds by the
    trapezoid rule on the RK4 step points (zeros when background is None).
    """
    history._require(from_time, to_time)
    x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 3))
    v = np.ascontiguousarray(np.asarray(v, dtype=float).reshape(-1, 3))
    nsteps = n_steps(from_time, to_time, dt)
    if nsteps == 0:
        return x.copy(), v.copy(), np.zeros(len(x)), np.zeros(len(x), dtype=bool)
    if background is None:
        bg = (0, 0.0, 1.0, False)
    else:
        bg = (background.power, float(background.kappa), float(background.W), True)
    return _kernels.trace_batch(x, v, float(from_time), float(to_time), nsteps, *history.field_args(), *bg)


def trace(history: FieldHistory, from_time: float, state: PhaseState, to_time: float, dt: float) -> TraceResult:
    X, V, _, flags = trace_many(history, from_time, [state.x], [state.v], to_time, dt)
    return TraceResult(PhaseState(tuple(X[0]), tuple(V[0])), bool(flags[0]))


def trace_path(history: FieldHistory, from_time: float, x, v, to_time: float, dt: float):
    """Step-point samples (s, X, V, flags): X and V have shape (n, nsteps + 1, 3)."""
    history._require(from_time, to_time)
    x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1, 3))
    v = np.ascontiguousarray(np.asarray(v, dtype=float).reshape(-1, 3))
    nsteps = n_steps(from_time, to_time, dt)
    s = np.linspace(from_time, to_time, nsteps + 1)
    if nsteps == 0:
        return s, x[:, None, :].copy(), v[:, None, :].copy(), np.zeros(len(x), dtype=bool)
    X, V, flags = _kernels.trace_paths(x, v, float(from_time), float(to_time), nsteps, *history.field_args())
    return s, X, V, flags


def displacement_check(history: FieldHistory, t: float, state: PhaseState, T_total: float, Qg_bound: float,
                       dt: float) -> ConditionReport:
    """|X(s) - x| <= T Q_g(T) on the traced path, and (1/2)|x| <= |X(s)| <= (3/2)|x| when |x| >= 2 T Q_g(T)."""
    lo = max(float(history.times[0]), 0.0)
    hi = min(float(history.times[-1]), T_total)
    x = np.asarray(state.x)
    paths = []
    for end in (lo, hi):
        if abs(end - t) > 0:
            _, X, _, _ = trace_path(history, t, [state.x], [state.v], end, dt)
            paths.append(X[0])
    X = np.concatenate(paths) if paths else x[None, :]
    bound = T_total * Qg_bound
    drift = float(np.max(np.linalg.norm(X - x, axis=-1)))
    clauses = [ClauseResult("drift", "pass" if drift <= bound * (1 + 1e-12) else "fail", drift,
                            f"max |X(s) - x| against T Q_g = {bound!r}")]
    r0 = float(np.linalg.norm(x))
    radii = np.linalg.norm(X, axis=-1)
    if r0 >= 2.0 * bound and r0 > 0:
        lo_ratio = float(radii.min() / r0)
        hi_ratio = float(radii.max() / r0)
        ok = lo_ratio >= 0.5 - 1e-12 and hi_ratio <= 1.5 + 1e-12
        clauses.append(ClauseResult("confinement", "pass" if ok else "fail", lo_ratio,
                                    f"min |X|/|x| = {lo_ratio!r}, max |X|/|x| = {hi_ratio!r}"))
    else:
        clauses.append(ClauseResult("confinement", "pass", 0.0, "not applicable: |x| < 2 T Q_g"))
    return ConditionReport("displacement", clauses)


def phase_volume_check(history: FieldHistory, t: float, cell: PhaseState, s: float, dt: float,
                       h: float = 1e-4) -> float:
    """det d(X(s), V(s))/d(x, v) by central differences over the six coordinate directions."""
    base = cell.xv
    pts = np.repeat(base[None, :], 12, axis=0)
    for k in range(6):
        pts[2 * k, k] += h
        pts[2 * k + 1, k] -= h
    X, V, _, _ = trace_many(history, t, pts[:, :3], pts[:, 3:], s, dt)
    out = np.concatenate([X, V], axis=1)
    J = np.empty((6, 6))
    for k in range(6):
        J[:, k] = (out[2 * k] - out[2 * k + 1]) / (2.0 * h)
    return float(np.linalg.det(J))
