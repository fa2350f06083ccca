"""Log-type bound on |grad E| from sup |rho|, sup |grad rho| and the energy, and ln*."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

# |grad K(y)| <= 2 |y|^-3 for K(y) = y/|y|^3 sets the log and far-field constants.
# Inside |y| < d the derivative moves onto rho: int |K| = 4 pi d, and the sphere
# term 4 pi sup|rho| fits under the "1" of (1 + ln(R/d)).
KERNEL_GRAD = 2.0
C_LOG = KERNEL_GRAD * 4.0 * math.pi
C_NEAR = 4.0 * math.pi


def ln_star(s):
    """s on [0, 1] and 1 + ln s beyond; continuous at 1."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("ln_star is defined for s >= 0")
    out = np.where(s <= 1.0, s, 1.0 + np.log(np.maximum(s, 1.0)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DerivFieldConstants:
    """C1 multiplies (1 + ln(R/d)) sup|rho|, C2 multiplies d sup|grad rho|, c_k is the density-energy constant."""

    C1: float = C_LOG
    C2: float = C_NEAR
    c_k: float = 1.0


def tail_term(energy_total: float, R_big: float, c_k: float) -> float:
    """2 c_k int_{|y| > R} (k^(3/5) + k^(1/2)) |y|^-3 dy bounded by Holder against int k."""
    e = max(energy_total, 0.0)
    half = math.sqrt(e * 4.0 * math.pi / 3.0) * R_big**-1.5
    three_fifths = e**0.6 * (8.0 * math.pi / 9.0) ** 0.4 * R_big**-1.8
    return KERNEL_GRAD * c_k * (half + three_fifths)


def derivfield_bound(rho_sup: float, grad_rho_sup: float, energy_total: float, d: float, R_big: float,
                     constants: DerivFieldConstants = DerivFieldConstants()) -> float:
    """C1 (1 + ln(R/d)) rho_sup + C2 d grad_rho_sup + tail(R)."""
    if not d > 0:
        raise ValueError("d must be positive")
    if d > R_big:
        raise ValueError("need d <= R_big")
    return (constants.C1 * (1.0 + math.log(R_big / d)) * rho_sup + constants.C2 * d * grad_rho_sup
            + tail_term(energy_total, R_big, constants.c_k))


@dataclass(frozen=True)
class DerivFieldOptimum:
    d: float
    R_big: float
    bound: float


def minimize_derivfield_bound(rho_sup: float, grad_rho_sup: float, energy_total: float,
                              constants: DerivFieldConstants = DerivFieldConstants(),
                              R_range: tuple[float, float] = (1e-6, 1e8)) -> DerivFieldOptimum:
    """Choose (d, R) minimising the bound.

    For fixed R the d-dependence -C1 rho ln d + C2 d grad is minimised at
    d = C1 rho / (C2 grad), clipped to d <= R; R is then found by a bounded
    search in log R.
    """

    def best_d(R):
        if grad_rho_sup <= 0.0:
            return R
        if rho_sup <= 0.0:
            return min(R, R_range[0])
        return min(R, constants.C1 * rho_sup / (constants.C2 * grad_rho_sup))

    def objective(logR):
        R = math.exp(logR)
        return derivfield_bound(rho_sup, grad_rho_sup, energy_total, best_d(R), R, constants)

    lo, hi = math.log(R_range[0]), math.log(R_range[1])
    grid = np.linspace(lo, hi, 201)
    vals = [objective(x) for x in grid]
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    logR = float(res.x) if res.fun <= vals[i] else float(grid[i])
    R = math.exp(logR)
    d = best_d(R)
    return DerivFieldOptimum(d, R, derivfield_bound(rho_sup, grad_rho_sup, energy_total, d, R, constants))
