"""Electrostatic field E(x) = int rho(y) (x - y)/|x - y|^3 dy.

The kernel carries no 1/(4 pi), so div E = 4 pi rho. Radial densities use the
shell theorem on a node grid; a Cartesian grid mode (FFT convolution) exists
for cross-validation; oracle_field integrates the kernel directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import signal, special

from . import _kernels

FOUR_PI = 4.0 * math.pi

# radii beyond r_max where the tail charge is tabulated (log spaced, r_N .. r_N * TAIL_SPAN)
TAIL_TABLE_SIZE = 256
TAIL_SPAN = 1.0e6


class FieldSolveError(ValueError):
    pass


class OracleConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RadialDensity:
    """rho on radial nodes, linear in between, algebraic tail beyond r_max."""

    nodes: np.ndarray
    values: np.ndarray
    extrapolation_exponent: float = 6.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 2:
            raise ValueError("nodes and values must be 1-D arrays of equal length >= 2")
        if nodes[0] != 0.0:
            raise ValueError("first node must be r = 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    def value(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        inside = np.interp(r, self.nodes, self.values)
        R_N = math.sqrt(1.0 + self.r_max**2)
        tail = self.values[-1] * (R_N / np.sqrt(1.0 + r * r)) ** self.extrapolation_exponent
        return np.where(r <= self.r_max, inside, tail)

    def scaled(self, factor: float) -> "RadialDensity":
        return RadialDensity(self.nodes, factor * self.values, self.extrapolation_exponent)


@dataclass(frozen=True, eq=False)
class FieldState:
    """E at one time: radial profile e(r) with Hermite interpolation, or a Cartesian grid."""

    time: float
    mode: str
    # radial
    nodes: np.ndarray = field(default_factory=lambda: np.zeros(2))
    e: np.ndarray = field(default_factory=lambda: np.zeros(2))
    de: np.ndarray = field(default_factory=lambda: np.zeros(2))
    tail_r: np.ndarray = field(default_factory=lambda: np.ones(2))
    tail_q: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rho_tail: float = 0.0
    q_ext: float = 6.0
    # cartesian
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spacing: float = 1.0
    grid: np.ndarray = field(default_factory=lambda: np.zeros((2, 2, 2, 3)))
    q_total: float = 0.0

    @property
    def inv_h(self) -> float:
        """1/spacing for a uniform node grid, 0 otherwise."""
        h = np.diff(self.nodes)
        return 1.0 / float(h[0]) if np.allclose(h, h[0], rtol=1e-12, atol=0.0) else 0.0

    @property
    def R_N(self) -> float:
        return math.sqrt(1.0 + float(self.nodes[-1]) ** 2)

    def radial(self, r):
        """(e(r), e'(r), extrapolated) for an array of radii."""
        if self.mode != "radial":
            raise ValueError("radial profile requested from a cartesian field state")
        r = np.ascontiguousarray(np.abs(np.atleast_1d(np.asarray(r, dtype=float))).ravel())
        return _kernels.radial_eval_many(r, self.nodes, self.inv_h, self.e, self.de, self.tail_r,
                                         self.tail_q, self.rho_tail, self.q_ext, self.R_N)

    def E(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, 3)
        if self.mode == "radial":
            r = np.linalg.norm(pts, axis=-1)
            e, _, _ = self.radial(r)
            safe = np.where(r > 0, r, 1.0)
            out = np.where(r[:, None] > 0, (e / safe)[:, None] * pts, 0.0)
        else:
            grid = self.grid[None]
            qt = np.array([self.q_total])
            out = np.array([_kernels.cart_eval(p[0], p[1], p[2], self.origin, self.spacing, grid, qt, 0)[:3]
                            for p in pts]).reshape(-1, 3)
        return out.reshape(x.shape)


def enclosed_charge(rho: RadialDensity) -> np.ndarray:
    """Q_enc at every node, exact for the piecewise-linear density."""
    a = rho.nodes[:-1]
    b = rho.nodes[1:]
    ra = rho.values[:-1]
    slope = (rho.values[1:] - ra) / (b - a)
    cube = (b**3 - a**3) / 3.0
    quart = (b**4 - a**4) / 4.0
    per_interval = ra * cube + slope * (quart - a * cube)
    return FOUR_PI * np.concatenate([[0.0], np.cumsum(per_interval)])


def tail_charge(rho_N: float, q_ext: float, r_N: float, r) -> np.ndarray:
    """4 pi int_{r_N}^{r} rho_N (R(r_N)/R(s))^q s^2 ds, via the regularized incomplete beta."""
    r = np.asarray(r, dtype=float)
    if rho_N == 0.0:
        return np.zeros_like(r)
    if q_ext <= 3.0:
        raise FieldSolveError(f"density tail with exponent {q_ext} <= 3 has infinite charge")
    # int_0^r s^2 (1+s^2)^(-q/2) ds = B(3/2, (q-3)/2)/2 * I_t(3/2, (q-3)/2), t = r^2/(1+r^2)
    alpha, beta = 1.5, 0.5 * (q_ext - 3.0)
    scale = 0.5 * special.beta(alpha, beta)

    def prim(s):
        return scale * special.betainc(alpha, beta, s * s / (1.0 + s * s))

    R_N = math.sqrt(1.0 + r_N * r_N)
    return FOUR_PI * rho_N * R_N**q_ext * (prim(r) - prim(r_N))


def solve_field_radial(rho: RadialDensity, time: float = 0.0) -> FieldState:
    Q = enclosed_charge(rho)
    r = rho.nodes
    e = np.zeros_like(Q)
    e[1:] = Q[1:] / r[1:] ** 2
    de = np.empty_like(Q)
    de[0] = FOUR_PI * rho.values[0] / 3.0
    de[1:] = FOUR_PI * rho.values[1:] - 2.0 * e[1:] / r[1:]
    r_N = rho.r_max
    tail_r = np.geomspace(r_N, r_N * TAIL_SPAN, TAIL_TABLE_SIZE)
    tail_q = Q[-1] + tail_charge(float(rho.values[-1]), rho.extrapolation_exponent, r_N, tail_r)
    return FieldState(time=float(time), mode="radial", nodes=r.copy(), e=e, de=de, tail_r=tail_r, tail_q=tail_q,
                      rho_tail=float(rho.values[-1]), q_ext=float(rho.extrapolation_exponent))


def solve_grad_field(state: FieldState, x):
    """Jacobian J[..., i, j] = dE_i/dx_j of the interpolated field, plus an extrapolation flag."""
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 3)
    if state.mode == "radial":
        r = np.linalg.norm(pts, axis=-1)
        e, de, flags = state.radial(r)
        safe = np.where(r > 0, r, 1.0)
        n = pts / safe[:, None]
        nn = n[:, :, None] * n[:, None, :]
        eye = np.eye(3)
        J = (e / safe)[:, None, None] * (eye - nn) + de[:, None, None] * nn
        J[r == 0] = de[r == 0][:, None, None] * eye
    else:
        J, flags = _cartesian_jacobian(state, pts)
    return J.reshape(x.shape + (3,)), flags.reshape(x.shape[:-1])


def _cartesian_jacobian(state: FieldState, pts: np.ndarray):
    n = state.grid.shape[0]
    g = (pts - state.origin) / state.spacing
    outside = np.any((g < 0) | (g > n - 1), axis=-1)
    idx = np.clip(np.floor(g).astype(int), 0, n - 2)
    f = np.clip(g - idx, 0.0, 1.0)
    J = np.zeros((len(pts), 3, 3))
    grid = state.grid
    for corner in range(8):
        c = np.array([(corner >> k) & 1 for k in range(3)])
        vals = grid[idx[:, 0] + c[0], idx[:, 1] + c[1], idx[:, 2] + c[2]]
        w = np.where(c == 1, f, 1.0 - f)
        dw = np.where(c == 1, 1.0, -1.0) / state.spacing
        for j in range(3):
            others = np.prod(np.delete(w, j, axis=1), axis=1)
            J[:, :, j] += vals * (dw[j] * others)[:, None]
    if np.any(outside):
        xo = pts[outside]
        r = np.linalg.norm(xo, axis=-1)
        eye = np.eye(3)
        J[outside] = state.q_total * (eye / r[:, None, None] ** 3
                                      - 3.0 * xo[:, :, None] * xo[:, None, :] / r[:, None, None] ** 5)
    return J, outside


def solve_field_cartesian(rho_grid: np.ndarray, origin, spacing: float, time: float = 0.0) -> FieldState:
    """Direct-sum field on a cubic grid via FFT convolution (cell self-term dropped)."""
    rho_grid = np.asarray(rho_grid, dtype=float)
    n = rho_grid.shape[0]
    if rho_grid.shape != (n, n, n):
        raise ValueError("rho_grid must be a cube")
    if n > 48:
        raise ValueError("cartesian grids are limited to 48^3")
    k = np.arange(-(n - 1), n) * spacing
    zx, zy, zz = np.meshgrid(k, k, k, indexing="ij")
    d3 = (zx * zx + zy * zy + zz * zz) ** 1.5
    d3[n - 1, n - 1, n - 1] = np.inf
    grid = np.empty((n, n, n, 3))
    for c, z in enumerate((zx, zy, zz)):
        grid[..., c] = signal.fftconvolve(rho_grid, z / d3, mode="same") * spacing**3
    q_total = float(rho_grid.sum() * spacing**3)
    return FieldState(time=float(time), mode="cartesian", origin=np.asarray(origin, dtype=float), spacing=float(spacing),
                      grid=grid, q_total=q_total)


# Gauss-Kronrod 7/15 nodes and weights on [-1, 1]
_XK = np.array([
    -0.991455371120812639206854697526329, -0.949107912342758524526189684047851,
    -0.864864423359769072789712788640926, -0.741531185599394439863864773280788,
    -0.586087235467691130294144845693013, -0.405845151377397166906606412076961,
    -0.207784955007898467600689403773245, 0.0,
    0.207784955007898467600689403773245, 0.405845151377397166906606412076961,
    0.586087235467691130294144845693013, 0.741531185599394439863864773280788,
    0.864864423359769072789712788640926, 0.949107912342758524526189684047851,
    0.991455371120812639206854697526329])
_WK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
    0.204432940075298892414161999234649, 0.190350578064785409913256402421014,
    0.169004726639267902826583426598550, 0.140653259715525918745189590510238,
    0.104790010322250183839876322541518, 0.063092092629978553290700663189204,
    0.022935322010529224963732008058970])
_WG = np.zeros(15)
_WG[1::2] = [0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
             0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
             0.381830050505118944950369775488975, 0.279705391489276667901467771423780,
             0.129484966168869693270611432679082]

# panel endpoints plus the 15 Kronrod nodes; the endpoints only feed the error estimate
_XE = np.concatenate([[-1.0], _XK, [1.0]])
_SLIVER = 1.0 - _XK[-1]
_EXTRAP = _SLIVER / (_XK[-1] - _XK[-2])


def gk_integrate(func: Callable[[np.ndarray, np.ndarray], np.ndarray], owner, lo, hi, n_owner: int, atol,
                 dim: int = 1, max_panels: int = 2_000_000, max_rounds: int = 60) -> np.ndarray:
    """Many independent adaptive integrals at once.

    Integral o is the sum over the initial panels with owner == o. func(owner_idx, s)
    returns values of shape (len(s), dim). Each integral is refined until the sum of
    its panel error estimates |K15 - G7| is below atol[o].
    """
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (n_owner,))
    owner = np.asarray(owner, dtype=np.int64)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    length = np.bincount(owner, weights=hi - lo, minlength=n_owner)
    result = np.zeros((n_owner, dim))
    kept_o = np.empty(0, dtype=np.int64)
    kept_lo = kept_hi = kept_err = np.empty(0)
    kept_val = np.empty((0, dim))
    new_o, new_lo, new_hi = owner, lo, hi
    for _ in range(max_rounds):
        half = 0.5 * (new_hi - new_lo)
        mid = 0.5 * (new_hi + new_lo)
        s = (mid[:, None] + half[:, None] * _XE[None, :]).ravel()
        vals = np.asarray(func(np.repeat(new_o, 17), s), dtype=float).reshape(len(new_o), 17, dim)
        inner = vals[:, 1:-1]
        K = half[:, None] * np.einsum("k,pkd->pd", _WK, inner)
        G = half[:, None] * np.einsum("k,pkd->pd", _WG, inner)
        # features in the end slivers beyond the outermost nodes are invisible to K - G;
        # compare each end value with the line through the two nearest nodes
        lin0 = vals[:, 1] + (vals[:, 1] - vals[:, 2]) * _EXTRAP
        lin1 = vals[:, -2] + (vals[:, -2] - vals[:, -3]) * _EXTRAP
        ends = np.abs(vals[:, 0] - lin0) + np.abs(vals[:, -1] - lin1)
        err = (np.abs(K - G) + half[:, None] * _SLIVER * ends).max(axis=1)

        all_o = np.concatenate([kept_o, new_o])
        all_lo = np.concatenate([kept_lo, new_lo])
        all_hi = np.concatenate([kept_hi, new_hi])
        all_val = np.concatenate([kept_val, K])
        all_err = np.concatenate([kept_err, err])

        err_sum = np.bincount(all_o, weights=all_err, minlength=n_owner)
        done_owner = err_sum <= atol
        done = done_owner[all_o]
        np.add.at(result, all_o[done], all_val[done])
        rest = ~done
        if not np.any(rest):
            return result
        all_o, all_lo, all_hi = all_o[rest], all_lo[rest], all_hi[rest]
        all_val, all_err = all_val[rest], all_err[rest]
        worst = np.zeros(n_owner)
        np.maximum.at(worst, all_o, all_err)
        share = atol[all_o] * (all_hi - all_lo) / np.where(length[all_o] > 0, length[all_o], 1.0)
        split = (all_err > share) | ((all_err >= worst[all_o]) & (all_err > 0))
        if all_o.size + split.sum() > max_panels:
            break
        kept_o, kept_lo, kept_hi = all_o[~split], all_lo[~split], all_hi[~split]
        kept_val, kept_err = all_val[~split], all_err[~split]
        so, slo, shi = all_o[split], all_lo[split], all_hi[split]
        smid = 0.5 * (slo + shi)
        new_o = np.concatenate([so, so])
        new_lo = np.concatenate([slo, smid])
        new_hi = np.concatenate([smid, shi])
    raise OracleConvergenceError("adaptive quadrature did not reach tolerance within its budget")


_RAY_BREAKS = np.array([0.25, 1.0, 4.0, 16.0, 64.0, 256.0])


RAY_CHUNK = 2048


def ray_integrals(rho_3d, x, dirs, s_max, atol) -> np.ndarray:
    """int_0^{s_max} rho(x + s w) ds for every direction w (rows of dirs)."""
    if len(dirs) > RAY_CHUNK:
        return np.concatenate([_ray_chunk(rho_3d, x, dirs[i:i + RAY_CHUNK], s_max[i:i + RAY_CHUNK], atol)
                               for i in range(0, len(dirs), RAY_CHUNK)])
    return _ray_chunk(rho_3d, x, dirs, s_max, atol)


def _ray_chunk(rho_3d, x, dirs, s_max, atol) -> np.ndarray:
    n = len(dirs)
    closest = -(dirs @ x)
    extra = closest[:, None] + np.array([-1.0, 0.0, 1.0])[None, :]
    breaks = np.concatenate([np.zeros((n, 1)), np.broadcast_to(_RAY_BREAKS, (n, _RAY_BREAKS.size)), extra,
                             s_max[:, None]], axis=1)
    breaks = np.sort(np.clip(breaks, 0.0, s_max[:, None]), axis=1)
    owner = np.repeat(np.arange(n), breaks.shape[1] - 1)
    lo = breaks[:, :-1].ravel()
    hi = breaks[:, 1:].ravel()

    def integrand(o, s):
        pts = x[None, :] + s[:, None] * dirs[o]
        return np.asarray(rho_3d(pts), dtype=float)[:, None]

    return gk_integrate(integrand, owner, lo, hi, n, atol)[:, 0]


def _frame(x):
    r = np.linalg.norm(x)
    axis = -x / r if r > 0 else np.array([0.0, 0.0, 1.0])
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2, axis


def oracle_field(rho_3d: Callable[[np.ndarray], np.ndarray], x, tol: float = 1e-7, domain_radius: float = 60.0,
                 rtol: float | None = None, max_phi: int = 512) -> np.ndarray:
    """E(x) by direct quadrature in spherical coordinates centred at x.

    With y = x + s w the kernel times the volume element is -w ds dOmega, so
    E(x) = -int dOmega w int_0^{s_max(w)} rho(x + s w) ds: no singularity remains.
    The polar axis points from x toward the origin; mu is adaptive, phi uses the
    trapezoid rule with the half-resolution rule as its error estimate. The
    density is truncated to the ball |y| <= domain_radius. With rtol, a coarse
    pass sets the absolute tolerance to max(tol, rtol |E|).
    """
    x = np.asarray(x, dtype=float)
    if np.linalg.norm(x) >= domain_radius:
        raise ValueError("evaluation point must lie inside the truncation ball")
    if rtol is not None:
        coarse = oracle_field(rho_3d, x, tol=max(tol, 1e-3), domain_radius=domain_radius, max_phi=max_phi)
        tol = max(tol, rtol * float(np.linalg.norm(coarse)))
    e1, e2, e3 = _frame(x)
    xx = float(x @ x)
    L2 = domain_radius**2

    def integrate(n_phi):
        phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
        ring = np.cos(phis)[:, None] * e1 + np.sin(phis)[:, None] * e2

        def outer(_, mus):
            sin_t = np.sqrt(np.clip(1.0 - mus * mus, 0.0, None))
            dirs = (mus[:, None, None] * e3 + sin_t[:, None, None] * ring[None]).reshape(-1, 3)
            xw = dirs @ x
            s_max = -xw + np.sqrt(xw * xw - xx + L2)
            # inner noise must stay well below the outer error estimate
            h = ray_integrals(rho_3d, x, dirs, s_max, tol / (64.0 * np.pi)).reshape(len(mus), n_phi)
            w = dirs.reshape(len(mus), n_phi, 3)
            fine = -(2.0 * np.pi / n_phi) * np.einsum("mp,mpc->mc", h, w)
            half = -(4.0 * np.pi / n_phi) * np.einsum("mp,mpc->mc", h[:, ::2], w[:, ::2])
            return np.concatenate([fine, fine - half], axis=1)

        edges = np.linspace(-1.0, 1.0, 9)
        out = gk_integrate(outer, np.zeros(8, dtype=np.int64), edges[:-1], edges[1:], 1, 0.5 * tol, dim=6)[0]
        return out[:3], float(np.max(np.abs(out[3:])))

    n_phi = 8
    while n_phi <= max_phi:
        E, phi_err = integrate(n_phi)
        if phi_err <= 0.5 * tol:
            return E
        n_phi *= 2
    raise OracleConvergenceError(f"azimuthal resolution did not converge by {max_phi} points")
