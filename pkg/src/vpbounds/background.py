"""Steady radial background F(v) = F_R(|v|) and the energy functionals built on it."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .reports import ClauseResult, ConditionReport

# Exponent n of the polynomial bump kappa * (W^2 - u^2)^n for each built-in kind.
PROFILE_POWERS = {"smooth_bump": 3, "c1_bump": 2}

DERIV_JUMP_TOL = 1e-6


@dataclass(frozen=True)
class BackgroundProfile:
    W: float = 1.0
    kappa: float = 1.0
    profile_kind: str = "smooth_bump"

    def __post_init__(self):
        if self.profile_kind not in PROFILE_POWERS:
            raise ValueError(f"unknown profile_kind {self.profile_kind!r}")
        if not self.W > 0:
            raise ValueError("W must be positive")

    @property
    def power(self) -> int:
        return PROFILE_POWERS[self.profile_kind]

    @property
    def peak(self) -> float:
        """F(0) = kappa * W^(2n)."""
        return self.kappa * self.W ** (2 * self.power)

    def F_R(self, u):
        u = np.abs(np.asarray(u, dtype=float))
        base = np.clip(self.W**2 - u**2, 0.0, None)
        return self.kappa * base**self.power

    def dF_R(self, u):
        u = np.abs(np.asarray(u, dtype=float))
        n = self.power
        base = np.clip(self.W**2 - u**2, 0.0, None)
        return -2.0 * n * self.kappa * u * base ** (n - 1)

    def d2F_R(self, u):
        u = np.abs(np.asarray(u, dtype=float))
        n = self.power
        base = np.clip(self.W**2 - u**2, 0.0, None)
        inside = u < self.W
        val = -2.0 * n * self.kappa * base ** (n - 1) + 4.0 * n * (n - 1) * self.kappa * u**2 * base ** (n - 2)
        return np.where(inside, val, 0.0)

    def inverse(self, h):
        """F^{-1} on [0, F(0)]: the speed u in [0, W] with F_R(u) = h."""
        h = np.clip(np.asarray(h, dtype=float), 0.0, self.peak)
        if self.kappa <= 0:
            raise ValueError("inverse requires kappa > 0")
        return np.sqrt(np.clip(self.W**2 - (h / self.kappa) ** (1.0 / self.power), 0.0, None))


def eval_F(profile: BackgroundProfile, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return profile.F_R(np.linalg.norm(v, axis=-1))


def eval_gradF(profile: BackgroundProfile, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    u = np.linalg.norm(v, axis=-1)
    # F_R'(u)/u is a polynomial in u, so the quotient is regular at the origin
    n = profile.power
    base = np.clip(profile.W**2 - u**2, 0.0, None)
    ratio = -2.0 * n * profile.kappa * base ** (n - 1)
    ratio = np.where(u < profile.W, ratio, 0.0)
    return ratio[..., None] * v


@dataclass
class EnergyFunctionals:
    """sigma(h) = -int_0^{min(h, F(0))} (F^{-1})^2 and the convex functional S(h, eta)."""

    profile: BackgroundProfile
    table_size: int = 513
    f0_peak: float = field(init=False)

    def __post_init__(self):
        self.f0_peak = float(self.profile.peak)

    @cached_property
    def sigma_table(self) -> tuple[np.ndarray, np.ndarray]:
        hs = np.linspace(0.0, self.f0_peak, self.table_size)
        return hs, np.array([sigma_quadrature(self.profile, h) for h in hs])

    def closed_form_available(self) -> bool:
        return self.profile.kappa > 0

    def sigma(self, h):
        h = np.asarray(h, dtype=float)
        if self.closed_form_available():
            return sigma_closed_form(self.profile, h)
        hs, vals = self.sigma_table
        return np.interp(np.minimum(h, self.f0_peak), hs, vals)


def sigma_closed_form(profile: BackgroundProfile, h):
    # (F^{-1}(h))^2 = W^2 - (h / kappa)^(1/n) for the polynomial bumps
    H = np.minimum(np.clip(np.asarray(h, dtype=float), 0.0, None), profile.peak)
    n = profile.power
    p = 1.0 + 1.0 / n
    return -(profile.W**2 * H - profile.kappa ** (-1.0 / n) * H**p / p)


def sigma_quadrature(profile: BackgroundProfile, h: float, epsabs: float = 1e-13) -> float:
    """sigma(h) by adaptive quadrature after the substitution h~ = F_R(u).

    int_0^H (F^{-1}(h~))^2 dh~ = int_{u_H}^{W} u^2 (-F_R'(u)) du with u_H = F^{-1}(H),
    which removes the unbounded derivative of F^{-1} near F(0).
    """
    H = min(max(float(h), 0.0), profile.peak)
    if H <= 0.0:
        return 0.0
    if H >= profile.peak:
        u_H = 0.0
    else:
        u_H = optimize.brentq(lambda u: float(profile.F_R(u)) - H, 0.0, profile.W, xtol=1e-15)
    val, _ = integrate.quad(lambda u: -(u**2) * float(profile.dF_R(u)), u_H, profile.W, epsabs=epsabs, epsrel=1e-13, limit=200)
    return -val


def eval_sigma(funcs: EnergyFunctionals, h):
    if np.any(np.asarray(h) < 0):
        raise ValueError("sigma is defined for h >= 0")
    return funcs.sigma(h)


def eval_S(funcs: EnergyFunctionals, h, eta):
    h = np.asarray(h, dtype=float)
    eta = np.asarray(eta, dtype=float)
    Fe = funcs.profile.F_R(eta)
    return (h - Fe) * eta**2 + funcs.sigma(h) - funcs.sigma(Fe)


def _one_sided_second_derivative(fn: Callable[[float], float], u0: float, side: int, delta0: float) -> float:
    """Limit of one-sided second differences at u0, extrapolated to zero step.

    D(d) = [f(u0) - 2 f(u0 + s d) + f(u0 + 2 s d)] / d^2 is polynomial in d for
    polynomial f; five halvings and a degree-4 fit recover D(0) to roundoff.
    """
    deltas = delta0 / 2.0 ** np.arange(5)
    D = [(fn(u0) - 2.0 * fn(u0 + side * d) + fn(u0 + 2 * side * d)) / d**2 for d in deltas]
    coeffs = np.polyfit(deltas, D, 4)
    return float(coeffs[-1])


def check_condition_I(profile: BackgroundProfile, n_samples: int = 2001) -> ConditionReport:
    W = profile.W
    fn = lambda u: float(profile.F_R(u))
    us = np.linspace(0.0, 2.0 * W, n_samples)
    vals = profile.F_R(us)
    clauses = []

    min_val = float(vals.min())
    clauses.append(ClauseResult("nonnegative", "pass" if min_val >= 0 else "fail", min_val,
                                "min F_R over [0, 2W]"))

    left = _one_sided_second_derivative(fn, W, -1, 1e-2 * W)
    right = _one_sided_second_derivative(fn, W, +1, 1e-2 * W)
    jump = abs(left - right)
    clauses.append(ClauseResult("c2_at_W", "pass" if jump < DERIV_JUMP_TOL else "fail", jump,
                                "|F_R''(W-) - F_R''(W+)| by extrapolated finite differences"))

    d = 1e-3 * W
    d2_origin = 2.0 * (fn(d) - fn(0.0)) / d**2
    clauses.append(ClauseResult("concave_at_origin", "pass" if d2_origin < 0 else "fail", d2_origin,
                                "F_R''(0) by central difference"))

    interior = np.linspace(0.0, W, n_samples)[1:-1]
    slopes = (profile.F_R(interior + 1e-7 * W) - profile.F_R(interior - 1e-7 * W)) / (2e-7 * W)
    worst_slope = float(slopes.max())
    clauses.append(ClauseResult("decreasing_on_support", "pass" if worst_slope < 0 else "fail", worst_slope,
                                "max of F_R' on (0, W)"))

    outer = profile.F_R(us[us >= W])
    inner = profile.F_R(us[us < W])
    beyond = float(np.abs(outer).max())
    positive_inside = bool(np.all(inner > 0))
    status = "pass" if beyond == 0.0 and positive_inside else "fail"
    clauses.append(ClauseResult("support_radius_W", status, beyond,
                                "max |F_R| on [W, 2W]; F_R > 0 on [0, W) required"))
    return ConditionReport("I", clauses)
