"""The energy density k(t, x) = int S(f, |v|) dv, its integral, and the bounds built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..background import EnergyFunctionals, eval_F, eval_S
from ..coulomb import tail_charge
from ..extfield import eval_A
from ..kinetic import KineticState, VelocityQuadrature, eval_g, sample_g

# Gauss-Legendre points per radial panel for the x-integral
PANEL_ORDER = 8
# k below this multiple of its roundoff floor carries no digits
K_RESOLVED = 1e3


def radial_rule(r_max: float, n_inner: int = 16, n_outer: int = 32, r_split: float = 4.0):
    """Composite Gauss-Legendre nodes and weights for int_0^r_max ... 4 pi r^2 dr."""
    r_split = min(r_split, 0.5 * r_max)
    edges = np.concatenate([np.linspace(0.0, r_split, n_inner + 1), np.geomspace(r_split, r_max, n_outer + 1)[1:]])
    x, w = np.polynomial.legendre.leggauss(PANEL_ORDER)
    a, b = edges[:-1, None], edges[1:, None]
    r = (0.5 * (b - a) * (x + 1.0) + a).ravel()
    wr = (0.5 * (b - a) * w).ravel()
    return r, 4.0 * math.pi * r * r * wr


@dataclass(frozen=True)
class VelocityMoments:
    """Per-radius velocity integrals from one characteristic sample."""

    radii: np.ndarray
    rho: np.ndarray
    abs_g: np.ndarray
    k: np.ndarray
    clip: float
    # size of the cancellation error in k: S is a difference of O(1) terms
    k_noise: float = 0.0


def velocity_moments(state: KineticState, t: float, radii, funcs: EnergyFunctionals | None = None) -> VelocityMoments:
    """rho = int g dv, int |g| dv and k = int S(f, |v|) dv at x = r e_1 for each radius."""
    funcs = funcs or EnergyFunctionals(state.background)
    radii = np.asarray(radii, dtype=float)
    g, quad = sample_g(state, t, radii)
    wts = quad.weights
    F = eval_F(state.background, quad.velocities())
    f = F[None] - g
    clip = float(max(0.0, -f.min())) if f.size else 0.0
    S = eval_S(funcs, np.clip(f, 0.0, None), quad.u[None, :, None])
    eta = quad.u[:, None]
    scale = np.abs(funcs.sigma(F)) + np.abs(F) * eta**2
    noise = float(np.finfo(float).eps * np.sum(np.abs(wts) * scale))
    return VelocityMoments(radii, np.einsum("nij,ij->n", g, wts), np.einsum("nij,ij->n", np.abs(g), wts),
                           np.einsum("nij,ij->n", S, wts), clip, noise)


def energy_k(state: KineticState, t: float, x) -> np.ndarray:
    """k(t, x) at points x (shape (..., 3)); radial symmetry reduces each to x = |x| e_1.

    S >= 0 pointwise, so negative quadrature sums are cancellation noise and are clipped.
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x.reshape(-1, 3), axis=-1)
    return np.clip(velocity_moments(state, t, r).k, 0.0, None).reshape(x.shape[:-1])


def _tail(k_N: float, r_N: float, exponent: float) -> float:
    return float(tail_charge(k_N, exponent, r_N, np.array(1e12 * max(r_N, 1.0))))


def energy_total(state: KineticState, t: float, r_max: float | None = None) -> float:
    """int k dx over |x| <= r_max by composite Gauss-Legendre, plus an algebraic tail.

    k is quadratic in g for small g, so beyond r_max it is extrapolated with
    twice the density's extrapolation exponent.
    """
    r_max = float(state.history.nodes[-1]) if r_max is None else r_max
    r, w = radial_rule(r_max)
    moments = velocity_moments(state, t, np.append(r, r_max))
    k = np.clip(moments.k, 0.0, None)
    return float(w @ k[:-1]) + _tail(float(k[-1]), r_max, 2.0 * state.extrapolation_exponent)


def field_energy(state: KineticState, t: float, r_max: float | None = None) -> float:
    """(1/4 pi) int |E|^2 dx; with int k dx it forms the conserved total energy."""
    r_max = float(state.history.nodes[-1]) if r_max is None else r_max
    r, w = radial_rule(r_max)
    pts = np.zeros((r.size, 3))
    pts[:, 0] = r
    pts = np.vstack([pts, [r_max, 0.0, 0.0]])
    # the self-consistent part only: remove the applied field
    E = state.history.total_field(t, pts) - eval_A(state.history.external, t, pts)
    inside = float(w @ np.sum(E[:-1] ** 2, axis=-1)) / (4.0 * math.pi)
    # beyond r_max, |E| = Q/r^2 up to the small tail charge: (1/4 pi) int Q^2/r^4 4 pi r^2 dr = Q^2/r_max
    Q = float(np.linalg.norm(E[-1])) * r_max**2
    return inside + Q * Q / r_max


def density_energy_ratio_from(rho, k, tol: float = 1e-12) -> np.ndarray:
    """|rho| / (k^(3/5) + k^(1/2)) pointwise; 0 where k = 0, which requires rho = 0 there too."""
    rho = np.abs(np.asarray(rho, dtype=float))
    k = np.clip(np.asarray(k, dtype=float), 0.0, None)
    denom = k**0.6 + k**0.5
    zero = denom == 0.0
    if np.any(rho[zero] > tol):
        raise AssertionError(f"k = 0 where |rho| = {float(rho[zero].max())!r}; the energy cannot control rho there")
    out = np.zeros_like(rho)
    out[~zero] = rho[~zero] / denom[~zero]
    return out


@dataclass(frozen=True)
class DensityEnergyRatio:
    sup_ratio: float
    argmax_radius: float
    sup_ratio_abs_g: float
    n_resolved: int = 0
    # first radius where k drops into roundoff; inf when every radius is resolved
    resolved_radius: float = float("inf")


def density_energy_ratio(state: KineticState, t: float, radii) -> DensityEnergyRatio:
    """Measured constant C in |int g dv| <= C (k^(3/5) + k^(1/2)) over the given radii.

    Also reports the same ratio with int |g| dv in the numerator. Radii where
    k sits within K_RESOLVED times its roundoff floor are skipped, since there
    the computed k has no correct digits.
    """
    m = velocity_moments(state, t, radii)
    keep = m.k > K_RESOLVED * m.k_noise
    # exact zeros are still checked: rho must vanish where g does
    keep |= (m.abs_g == 0.0)
    if not keep.any():
        return DensityEnergyRatio(0.0, math.nan, 0.0, 0, float(m.radii.min()))
    ratio = density_energy_ratio_from(m.rho[keep], m.k[keep])
    ratio_abs = density_energy_ratio_from(m.abs_g[keep], m.k[keep])
    i = int(np.argmax(ratio))
    dropped = m.radii[~keep]
    return DensityEnergyRatio(float(ratio[i]), float(m.radii[keep][i]), float(ratio_abs.max()), int(keep.sum()),
                              float(dropped.min()) if dropped.size else math.inf)


def tail_energy_check(state: KineticState, t: float, P_cut: float, r_max: float | None = None,
                      energy: float | None = None) -> tuple[float, float]:
    """(lhs, rhs) with lhs = int int_{|v| > P_cut} |v|^2 f and rhs = 2 int k dx."""
    W = state.background.W
    if P_cut < 2.0 * W:
        raise ValueError("P_cut must be at least 2W")
    rhs = 2.0 * (energy_total(state, t, r_max) if energy is None else energy)
    if P_cut >= state.v_cap:
        # the quadrature domain contains the support of f
        return 0.0, rhs
    r_max = float(state.history.nodes[-1]) if r_max is None else r_max
    r, w = radial_rule(r_max)
    quad = VelocityQuadrature.build(P_cut, state.v_cap, state.n_u, state.n_mu)
    n_in = state.n_u  # the [0, P_cut] panel is dropped
    u = quad.u[n_in:]
    vw = quad.weights[n_in:]
    vel = quad.velocities()[n_in:]
    x = np.zeros((r.size, 1, 1, 3))
    x[..., 0] = r[:, None, None]
    g = eval_g(state, t, x, vel[None])
    f = np.clip(eval_F(state.background, vel)[None] - g, 0.0, None)
    lhs = float(w @ np.einsum("nij,ij->n", f, vw * (u**2)[:, None]))
    return lhs, rhs
