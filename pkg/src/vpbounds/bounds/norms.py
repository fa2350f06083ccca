"""Weighted sup norms sup R^q |rho| and power-law decay fits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..coulomb import RadialDensity


def japanese(r):
    """R(r) = (1 + r^2)^(1/2)."""
    r = np.asarray(r, dtype=float)
    return np.sqrt(1.0 + r * r)


@dataclass(frozen=True)
class WeightedNormRecord:
    q: float
    value: float
    argmax_radius: float

    def __post_init__(self):
        if self.q < 0 or not self.value >= 0:
            raise ValueError("weighted norm needs q >= 0 and a nonnegative value")


def weighted_norm(rho: RadialDensity, q: float) -> WeightedNormRecord:
    """sup R(r)^q |rho(r)| over the sampled nodes and the algebraic tail beyond r_max.

    The tail rho_N (R_N/R)^p contributes |rho_N| R_N^q when q <= p (already
    counted at the last node) and is unbounded when q > p.
    """
    if q < 0:
        raise ValueError("q must be nonnegative")
    w = japanese(rho.nodes) ** q * np.abs(rho.values)
    k = int(np.argmax(w))
    value, where = float(w[k]), float(rho.nodes[k])
    # tail: |rho_N| R_N^p R^(q - p), increasing in r when q > p
    rho_N = abs(float(rho.values[-1]))
    if rho_N > 0.0 and q > rho.extrapolation_exponent:
        return WeightedNormRecord(q, math.inf, math.inf)
    return WeightedNormRecord(q, value, where)


def fit_decay_exponent(radius, value, r_min: float = 0.0) -> float:
    """Least-squares slope of log(value) against log R(r) over r >= r_min, negated."""
    r = np.asarray(radius, dtype=float)
    v = np.asarray(value, dtype=float)
    if r.shape != v.shape:
        raise ValueError("radius and value must have the same shape")
    keep = r >= r_min
    r, v = r[keep], v[keep]
    if r.size < 5:
        raise ValueError("need at least 5 samples at or beyond r_min")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("decay fit needs positive finite values")
    slope = np.polyfit(np.log(japanese(r)), np.log(v), 1)[0]
    return float(-slope)
