"""Backward subdivision of [0, t0] into steps ~ Q^(-41/60), turning Q <= C t Q^(13/15) into a bound on Q."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

STEP_EXPONENT = -41.0 / 60.0
GROWTH_EXPONENT = 13.0 / 15.0
MAX_STEPS = 10_000_000


@dataclass(frozen=True)
class BootstrapResult:
    k: int
    t_nodes: list[float]
    lengths: list[float]
    uniform_lower_bound: float
    k_ceiling: float
    bound: float
    ceiling_fixed_point: float
    ceiling_closed_form: float
    checks: dict[str, bool] = field(default_factory=dict)


def _interp(times, values):
    def Q(t):
        return float(np.interp(t, times, values))

    return Q


def fixed_point_ceiling(C: float, t0: float, q_start: float = 1.0, tol: float = 1e-14, max_iter: int = 10_000) -> float:
    """Largest Q with Q <= C t0 Q^(13/15), by iterating Q <- C t0 Q^(13/15) in log space."""
    if C * t0 <= 0:
        raise ValueError("need C t0 > 0")
    log_c = math.log(C * t0)
    x = math.log(q_start)
    for _ in range(max_iter):
        nxt = log_c + GROWTH_EXPONENT * x
        if abs(nxt - x) <= tol * max(1.0, abs(nxt)):
            return math.exp(nxt)
        x = nxt
    raise RuntimeError("fixed-point iteration did not settle")


def bootstrap_iterate(times, values, C2: float, T1: float, t0: float, C: float = 1.0) -> BootstrapResult:
    """Replay the subdivision t_{i+1} = t_i - Q(t_i)^(-41/60) / (4 C2) from t0 down past T1.

    Q is the piecewise-linear interpolant of the samples (times, values), which
    must be nondecreasing. C is the constant in Q(t) <= C t Q(t)^(13/15) used for
    the reconstructed bound and the ceiling.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.ndim != 1 or times.shape != values.shape or times.size == 0:
        raise ValueError("times and values must be 1-D arrays of equal length")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be increasing")
    if np.any(np.diff(values) < 0):
        raise ValueError("Q samples must be nondecreasing")
    if np.any(values <= 0):
        raise ValueError("Q must be positive")
    if not C2 > 0:
        raise ValueError("C2 must be positive")
    Q = _interp(times, values)
    ceiling_fp = fixed_point_ceiling(C, t0) if C * t0 > 0 else 0.0
    ceiling_cf = (C * t0) ** 7.5 if C * t0 > 0 else 0.0
    if t0 <= T1:
        q1 = Q(T1)
        return BootstrapResult(0, [t0], [], 0.0, 0.0, q1, ceiling_fp, ceiling_cf, {"degenerate": True})

    Q0 = Q(t0)
    lower = Q0**STEP_EXPONENT / (4.0 * C2)
    nodes = [t0]
    lengths = []
    t = t0
    while t > T1:
        step = Q(t) ** STEP_EXPONENT / (4.0 * C2)
        lengths.append(step)
        t = t - step
        nodes.append(t)
        if len(lengths) > MAX_STEPS:
            raise RuntimeError("subdivision did not reach T1")
    k = len(lengths)
    k_ceiling = 4.0 * C2 * t0 * Q0 ** (-STEP_EXPONENT)
    bound = Q(T1) + C * k * Q0**STEP_EXPONENT * Q0**GROWTH_EXPONENT
    checks = {
        "lengths_above_uniform_bound": all(L >= lower for L in lengths),
        # needs t_k >= 0, which holds when T1 is consistent (step(t) <= t for t > T1)
        "t_k_nonnegative": nodes[-1] >= 0.0,
        "k_within_ceiling": k <= k_ceiling,
    }
    return BootstrapResult(k, nodes, lengths, lower, k_ceiling, bound, ceiling_fp, ceiling_cf, checks)
