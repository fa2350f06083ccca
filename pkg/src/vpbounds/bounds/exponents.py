"""Exponent selection (a, b, m, n) for the field decay estimates, and measured decay ratios."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..coulomb import FieldState, RadialDensity, solve_grad_field
from ..traj import FieldHistory
from .norms import fit_decay_exponent, japanese, weighted_norm

B_CAP = Fraction(5, 18)
# floats are read as the nearest fraction with a modest denominator, so 54/13 typed as a float is 54/13
MAX_DENOMINATOR = 10**9


class InfeasibleExponents(ValueError):
    pass


def _exact(q) -> Fraction:
    if isinstance(q, Fraction):
        return q
    if isinstance(q, int):
        return Fraction(q)
    return Fraction(float(q)).limit_denominator(MAX_DENOMINATOR)


@dataclass(frozen=True)
class ExponentSelection:
    """a, b for the |grad E| and |E| estimates; m, n are the interior choices per eta-regime.

    m_small and n_small are the choices for eta <= 1, m_large and n_large for eta >= 1.
    """

    q: Fraction
    a: Fraction
    b: Fraction
    m_small: Fraction
    m_large: Fraction
    n_small: Fraction
    n_large: Fraction

    def constraints(self) -> dict[str, bool]:
        q, a, b = self.q, self.a, self.b
        return {
            "a_plus_b": a + b == 1,
            "b_below_5_18": 0 <= b < B_CAP,
            "a_le_3_over_q": a <= 3 / q,
            "b_le_2_over_q": b <= 2 / q,
            "a_in_0_1": 0 <= a < 1,
        }


def exponent_window(q) -> tuple[Fraction, Fraction]:
    """(L, U): a must satisfy L < a <= U with L = max(1 - 2/q, 13/18), U = min(3/q, 1)."""
    q = _exact(q)
    if q <= 0:
        raise ValueError("q must be positive")
    return max(1 - 2 / q, 1 - B_CAP), min(3 / q, Fraction(1))


def choose_exponents(q) -> ExponentSelection:
    q = _exact(q)
    L, U = exponent_window(q)
    if L >= U:
        raise InfeasibleExponents(f"no admissible (a, b) for q = {q}: window [{L}, {U}] is empty")
    a = (L + U) / 2
    b = 1 - a
    return ExponentSelection(q, a, b, m_small=9 * b / (5 + 9 * b), m_large=3 * b / (2 + 3 * b),
                             n_small=14 * a / (9 * a + 5), n_large=5 * a / (3 * a + 2))


def field_state_at(history: FieldHistory, t: float) -> FieldState:
    """Radial field state at time t, linear between snapshots."""
    if history.mode != "radial":
        raise ValueError("field_state_at needs a radial history")
    times = history.times
    if not history.covers(t, t):
        raise ValueError(f"t = {t} is outside the stored history")
    k = int(np.clip(np.searchsorted(times, t) - 1, 0, max(times.size - 2, 0)))
    if times.size == 1:
        w = 0.0
    else:
        w = float(np.clip((t - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0))
    k1 = min(k + 1, times.size - 1)

    def mix(arr):
        return (1.0 - w) * arr[k] + w * arr[k1]

    return FieldState(time=float(t), mode="radial", nodes=history.nodes.copy(), e=mix(history.e_all),
                      de=mix(history.de_all), tail_r=history.tail_r, tail_q=mix(history.tailq_all),
                      rho_tail=float(mix(history.rho_tail_all)), q_ext=float(history.q_ext))


def density_from_field(state: FieldState) -> RadialDensity:
    """rho = (e' + 2 e / r) / 4 pi, the inverse of the radial solve at the nodes."""
    r = state.nodes
    rho = np.empty_like(r)
    rho[0] = 3.0 * state.de[0] / (4.0 * math.pi)
    rho[1:] = (state.de[1:] + 2.0 * state.e[1:] / r[1:]) / (4.0 * math.pi)
    return RadialDensity(r, rho, state.q_ext)


@dataclass(frozen=True)
class FieldRatioReport:
    q: float
    a: float
    b: float
    norm_q: float
    sup_E_ratio: float
    sup_gradE_ratio: float
    E_decay_exponent: float
    n_probes: int


def field_ratios(radii, E_mag, gradE_mag, norm_q: float, sel: ExponentSelection) -> FieldRatioReport:
    """Ratios |E| / (||rho||_q R^-q)^b and |grad E| / (||rho||_q R^-q)^a at radii >= 1.

    gradE_mag may be None when only the field is available.
    """
    r = np.asarray(radii, dtype=float)
    if np.any(r < 1.0):
        raise ValueError("probes must satisfy |x| >= 1")
    E_mag = np.asarray(E_mag, dtype=float)
    q, a, b = float(sel.q), float(sel.a), float(sel.b)
    base = norm_q * japanese(r) ** (-q)

    def ratio(num, power):
        num = np.asarray(num, dtype=float)
        den = base**power
        out = np.zeros_like(num)
        live = den > 0
        out[live] = num[live] / den[live]
        if np.any(num[~live] > 0):
            return math.inf
        return float(out.max()) if out.size else 0.0

    sup_E = ratio(E_mag, b)
    sup_G = ratio(gradE_mag, a) if gradE_mag is not None else math.nan
    positive = E_mag > 0
    decay = fit_decay_exponent(r[positive], E_mag[positive]) if positive.sum() >= 5 else math.nan
    return FieldRatioReport(q, a, b, float(norm_q), sup_E, sup_G, decay, int(r.size))


def field_ratio_check(history: FieldHistory, t: float, q, sel: ExponentSelection, probes) -> FieldRatioReport:
    """Measured constants of the |E| and |grad E| decay estimates at probe points |x| >= 1.

    Only the self-consistent field enters; the applied field is removed.
    """
    pts = np.asarray(probes, dtype=float).reshape(-1, 3)
    state = field_state_at(history, t)
    norm = weighted_norm(density_from_field(state), float(_exact(q))).value
    E = state.E(pts)
    J, _ = solve_grad_field(state, pts)
    r = np.linalg.norm(pts, axis=-1)
    return field_ratios(r, np.linalg.norm(E, axis=-1), np.linalg.norm(J, ord=2, axis=(-2, -1)), norm, sel)

