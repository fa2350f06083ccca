"""Compiled inner loops: field interpolation and RK4 characteristics.

Field histories are passed as flat arrays so one kernel serves radial and
Cartesian snapshots. Layout (all float64 unless noted):

  times (M,), inv_dt         snapshot times, increasing; 1/spacing or 0 if nonuniform
  mode  int                  0 radial, 1 cartesian
  radial:  nodes (N,), inv_h (1/spacing, 0 if nonuniform), e (M, N), de (M, N),
           tail_r (K,), tail_q (M, K), rho_tail (M,), q_ext, R_N
  cartesian: origin (3,), spacing, grid (M, n, n, n, 3), q_total (M,)
  external: ext_kind int, ext_m (3,), ext_a, ext_cut
  background: bg_power int, bg_kappa, bg_W
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

FOUR_PI = 4.0 * math.pi


@njit(cache=True)
def _bisect(a, x):
    """Index i with a[i] <= x < a[i+1], clamped to [-1, len(a) - 1].

    np.searchsorted in a kernel body defeats LLVM optimisation of the
    surrounding hot path, even when that branch never runs.
    """
    lo = 0
    hi = a.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


@njit(cache=True, inline="always")
def _locate(nodes, inv_h, r):
    n = nodes.shape[0]
    if inv_h > 0.0:
        i = int(r * inv_h)
    else:
        i = _bisect(nodes, r)
    if i < 0:
        i = 0
    if i > n - 2:
        i = n - 2
    return i


@njit(cache=True)
def radial_eval(r, nodes, inv_h, e, de, k, tail_r, tail_q, rho_tail, q_ext, R_N):
    """e(r) and e'(r) from snapshot row k of the (M, N) tables; returns (e, de, extrapolated).

    Rows are indexed rather than sliced: slicing inside the hot loop costs
    reference-count traffic on every call.
    """
    n = nodes.shape[0]
    r_max = nodes[n - 1]
    if r <= r_max:
        i = _locate(nodes, inv_h, r)
        h = nodes[i + 1] - nodes[i]
        s = (r - nodes[i]) * inv_h if inv_h > 0.0 else (r - nodes[i]) / h
        s2 = s * s
        s3 = s2 * s
        h00 = 2.0 * s3 - 3.0 * s2 + 1.0
        h10 = s3 - 2.0 * s2 + s
        h01 = -2.0 * s3 + 3.0 * s2
        h11 = s3 - s2
        val = h00 * e[k, i] + h10 * h * de[k, i] + h01 * e[k, i + 1] + h11 * h * de[k, i + 1]
        d00 = (6.0 * s2 - 6.0 * s) / h
        d10 = 3.0 * s2 - 4.0 * s + 1.0
        d01 = (-6.0 * s2 + 6.0 * s) / h
        d11 = 3.0 * s2 - 2.0 * s
        dval = d00 * e[k, i] + d10 * de[k, i] + d01 * e[k, i + 1] + d11 * de[k, i + 1]
        return val, dval, False
    # enclosed charge beyond the grid: tabulated in log r, constant past the table
    K = tail_r.shape[0]
    if r >= tail_r[K - 1]:
        Q = tail_q[k, K - 1]
    else:
        j = _bisect(tail_r, r)
        if j < 0:
            j = 0
        w = (math.log(r) - math.log(tail_r[j])) / (math.log(tail_r[j + 1]) - math.log(tail_r[j]))
        Q = (1.0 - w) * tail_q[k, j] + w * tail_q[k, j + 1]
    val = Q / (r * r)
    rho = rho_tail[k] * (R_N / math.sqrt(1.0 + r * r)) ** q_ext
    dval = FOUR_PI * rho - 2.0 * val / r
    return val, dval, True


@njit(cache=True, inline="always")
def radial_value(r, nodes, inv_h, e, de, k, tail_r, tail_q, rho_tail, q_ext, R_N):
    """e(r) only; the tracer's hot path."""
    n = nodes.shape[0]
    if r <= nodes[n - 1]:
        i = _locate(nodes, inv_h, r)
        h = nodes[i + 1] - nodes[i]
        s = (r - nodes[i]) * inv_h if inv_h > 0.0 else (r - nodes[i]) / h
        s2 = s * s
        s3 = s2 * s
        return ((2.0 * s3 - 3.0 * s2 + 1.0) * e[k, i] + (s3 - 2.0 * s2 + s) * h * de[k, i]
                + (3.0 * s2 - 2.0 * s3) * e[k, i + 1] + (s3 - s2) * h * de[k, i + 1]), False
    val, _, flag = radial_eval(r, nodes, inv_h, e, de, k, tail_r, tail_q, rho_tail, q_ext, R_N)
    return val, flag


@njit(cache=True, inline="always")
def cart_eval(x0, x1, x2, origin, spacing, grid, q_total, m):
    """Trilinear E from one Cartesian snapshot; monopole field outside the box. Returns (E0, E1, E2, outside)."""
    n = grid.shape[1]
    gx = (x0 - origin[0]) / spacing
    gy = (x1 - origin[1]) / spacing
    gz = (x2 - origin[2]) / spacing
    if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > n - 1 or gy > n - 1 or gz > n - 1:
        r2 = x0 * x0 + x1 * x1 + x2 * x2
        f = q_total[m] / (r2 * math.sqrt(r2))
        return f * x0, f * x1, f * x2, True
    i = min(int(gx), n - 2)
    j = min(int(gy), n - 2)
    k = min(int(gz), n - 2)
    fx = gx - i
    fy = gy - j
    fz = gz - k
    w000 = (1 - fx) * (1 - fy) * (1 - fz)
    w100 = fx * (1 - fy) * (1 - fz)
    w010 = (1 - fx) * fy * (1 - fz)
    w110 = fx * fy * (1 - fz)
    w001 = (1 - fx) * (1 - fy) * fz
    w101 = fx * (1 - fy) * fz
    w011 = (1 - fx) * fy * fz
    w111 = fx * fy * fz
    e0 = 0.0
    e1 = 0.0
    e2 = 0.0
    for c in range(3):
        val = (w000 * grid[m, i, j, k, c] + w100 * grid[m, i + 1, j, k, c] + w010 * grid[m, i, j + 1, k, c]
               + w110 * grid[m, i + 1, j + 1, k, c] + w001 * grid[m, i, j, k + 1, c]
               + w101 * grid[m, i + 1, j, k + 1, c] + w011 * grid[m, i, j + 1, k + 1, c]
               + w111 * grid[m, i + 1, j + 1, k + 1, c])
        if c == 0:
            e0 = val
        elif c == 1:
            e1 = val
        else:
            e2 = val
    return e0, e1, e2, False


@njit(cache=True, inline="always")
def ext_eval(x0, x1, x2, kind, m, a, cut):
    if kind == 1:
        R3 = (1.0 + x0 * x0 + x1 * x1 + x2 * x2) ** 1.5
        return (m[1] * x2 - m[2] * x1) / R3, (m[2] * x0 - m[0] * x2) / R3, (m[0] * x1 - m[1] * x0) / R3
    if kind == 2:
        r = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
        s = (r - 0.5 * cut) / (0.5 * cut)
        if s <= 0.0:
            return 0.0, 0.0, 0.0
        if s > 1.0:
            s = 1.0
        q = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
        f = a * q / (r * r * r)
        return f * x0, f * x1, f * x2
    return 0.0, 0.0, 0.0


@njit(cache=True, inline="always")
def total_field(t, x0, x1, x2, times, inv_dt, mode,
                nodes, inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                origin, spacing, grid_all, qtot_all,
                ext_kind, ext_m, ext_a, ext_cut):
    """E + A at (t, x), linear in time between snapshots. Returns (F0, F1, F2, extrapolated)."""
    M = times.shape[0]
    if M == 1 or t <= times[0]:
        k = 0
        w = 0.0
    elif t >= times[M - 1]:
        k = M - 2
        w = 1.0
    else:
        # snapshots are usually uniform (inv_dt > 0); fall back to bisection otherwise
        k = int((t - times[0]) * inv_dt) if inv_dt > 0.0 else 0
        if k > M - 2:
            k = M - 2
        if not (times[k] <= t <= times[k + 1]):
            k = _bisect(times, t)
            if k < 0:
                k = 0
            if k > M - 2:
                k = M - 2
        if inv_dt > 0.0:
            w = (t - times[k]) * inv_dt
        else:
            w = (t - times[k]) / (times[k + 1] - times[k])
    o0 = 0.0
    o1 = 0.0
    o2 = 0.0
    if mode == 0:
        r = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
        ev, flag = radial_value(r, nodes, inv_h, e_all, de_all, k, tail_r, tailq_all, rho_tail_all, q_ext, R_N)
        if w > 0.0:
            eb, _ = radial_value(r, nodes, inv_h, e_all, de_all, k + 1, tail_r, tailq_all, rho_tail_all,
                                 q_ext, R_N)
            ev = (1.0 - w) * ev + w * eb
        if r > 0.0:
            f = ev / r
            o0 = f * x0
            o1 = f * x1
            o2 = f * x2
    else:
        o0, o1, o2, flag = cart_eval(x0, x1, x2, origin, spacing, grid_all, qtot_all, k)
        if w > 0.0:
            b0, b1, b2, _ = cart_eval(x0, x1, x2, origin, spacing, grid_all, qtot_all, k + 1)
            o0 = (1.0 - w) * o0 + w * b0
            o1 = (1.0 - w) * o1 + w * b1
            o2 = (1.0 - w) * o2 + w * b2
    if ext_kind != 0:
        a0, a1, a2 = ext_eval(x0, x1, x2, ext_kind, ext_m, ext_a, ext_cut)
        o0 += a0
        o1 += a1
        o2 += a2
    return o0, o1, o2, flag


@njit(cache=True, inline="always")
def gradF_dot(v0, v1, v2, f0, f1, f2, bg_power, bg_kappa, bg_W):
    u2 = v0 * v0 + v1 * v1 + v2 * v2
    base = bg_W * bg_W - u2
    if base <= 0.0:
        return 0.0
    ratio = -2.0 * bg_power * bg_kappa * base ** (bg_power - 1)
    return ratio * (v0 * f0 + v1 * f1 + v2 * f2)


@njit(parallel=True, cache=True)
def trace_batch(xs, vs, t_from, t_to, nsteps, times, inv_dt, mode,
                nodes, inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                origin, spacing, grid_all, qtot_all,
                ext_kind, ext_m, ext_a, ext_cut,
                bg_power, bg_kappa, bg_W, want_source):
    """RK4 from t_from to t_to (either direction) for every row of xs, vs.

    Also returns int_{t_to}^{t_from} (E + A)(s, X(s)) . grad F(V(s)) ds by the
    trapezoid rule on the step points (when want_source) and a flag per row
    telling whether the path left the field grid.
    """
    n = xs.shape[0]
    xo = np.empty((n, 3))
    vo = np.empty((n, 3))
    src = np.zeros(n)
    flags = np.zeros(n, dtype=np.bool_)
    h = (t_to - t_from) / nsteps
    hh = 0.5 * h
    for p in prange(n):
        x0 = xs[p, 0]
        x1 = xs[p, 1]
        x2 = xs[p, 2]
        v0 = vs[p, 0]
        v1 = vs[p, 1]
        v2 = vs[p, 2]
        t = t_from
        acc = 0.0
        e0, e1, e2, flag = total_field(t, x0, x1, x2, times, inv_dt, mode, nodes, inv_h, e_all, de_all, tail_r,
                                       tailq_all, rho_tail_all, q_ext, R_N, origin, spacing, grid_all, qtot_all,
                                       ext_kind, ext_m, ext_a, ext_cut)
        for step in range(nsteps):
            if want_source:
                wgt = 0.5 if step == 0 else 1.0
                acc += wgt * gradF_dot(v0, v1, v2, e0, e1, e2, bg_power, bg_kappa, bg_W)
            # stage 1 reuses the field already evaluated at (t, x)
            a0 = v0 - hh * e0
            a1 = v1 - hh * e1
            a2 = v2 - hh * e2
            b0, b1, b2, f2 = total_field(t + hh, x0 + hh * v0, x1 + hh * v1, x2 + hh * v2, times, inv_dt, mode, nodes,
                                         inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                                         origin, spacing, grid_all, qtot_all, ext_kind, ext_m, ext_a, ext_cut)
            c0 = v0 - hh * b0
            c1 = v1 - hh * b1
            c2 = v2 - hh * b2
            d0, d1, d2, f3 = total_field(t + hh, x0 + hh * a0, x1 + hh * a1, x2 + hh * a2, times, inv_dt, mode, nodes,
                                         inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                                         origin, spacing, grid_all, qtot_all, ext_kind, ext_m, ext_a, ext_cut)
            g0 = v0 - h * d0
            g1 = v1 - h * d1
            g2 = v2 - h * d2
            k0, k1, k2, f4 = total_field(t + h, x0 + h * c0, x1 + h * c1, x2 + h * c2, times, inv_dt, mode, nodes,
                                         inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                                         origin, spacing, grid_all, qtot_all, ext_kind, ext_m, ext_a, ext_cut)
            x0 += h / 6.0 * (v0 + 2.0 * a0 + 2.0 * c0 + g0)
            x1 += h / 6.0 * (v1 + 2.0 * a1 + 2.0 * c1 + g1)
            x2 += h / 6.0 * (v2 + 2.0 * a2 + 2.0 * c2 + g2)
            v0 -= h / 6.0 * (e0 + 2.0 * b0 + 2.0 * d0 + k0)
            v1 -= h / 6.0 * (e1 + 2.0 * b1 + 2.0 * d1 + k1)
            v2 -= h / 6.0 * (e2 + 2.0 * b2 + 2.0 * d2 + k2)
            t = t_from + (step + 1) * h
            e0, e1, e2, f5 = total_field(t, x0, x1, x2, times, inv_dt, mode, nodes, inv_h, e_all, de_all, tail_r,
                                         tailq_all, rho_tail_all, q_ext, R_N, origin, spacing, grid_all, qtot_all,
                                         ext_kind, ext_m, ext_a, ext_cut)
            flag = flag or f2 or f3 or f4 or f5
        if want_source and nsteps > 0:
            acc += 0.5 * gradF_dot(v0, v1, v2, e0, e1, e2, bg_power, bg_kappa, bg_W)
        xo[p, 0] = x0
        xo[p, 1] = x1
        xo[p, 2] = x2
        vo[p, 0] = v0
        vo[p, 1] = v1
        vo[p, 2] = v2
        # acc * h integrates from t_from to t_to; flip to the t_to -> t_from orientation
        src[p] = -acc * h
        flags[p] = flag
    return xo, vo, src, flags


@njit(parallel=True, cache=True)
def trace_paths(xs, vs, t_from, t_to, nsteps, times, inv_dt, mode,
                nodes, inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                origin, spacing, grid_all, qtot_all,
                ext_kind, ext_m, ext_a, ext_cut):
    """Like trace_batch but records (X, V) at every step point: shape (n, nsteps + 1, 3)."""
    n = xs.shape[0]
    X = np.empty((n, nsteps + 1, 3))
    V = np.empty((n, nsteps + 1, 3))
    flags = np.zeros(n, dtype=np.bool_)
    h = (t_to - t_from) / nsteps if nsteps > 0 else 0.0
    hh = 0.5 * h
    for p in prange(n):
        x0 = xs[p, 0]
        x1 = xs[p, 1]
        x2 = xs[p, 2]
        v0 = vs[p, 0]
        v1 = vs[p, 1]
        v2 = vs[p, 2]
        X[p, 0, 0] = x0
        X[p, 0, 1] = x1
        X[p, 0, 2] = x2
        V[p, 0, 0] = v0
        V[p, 0, 1] = v1
        V[p, 0, 2] = v2
        t = t_from
        flag = False
        for step in range(nsteps):
            e0, e1, e2, f1 = total_field(t, x0, x1, x2, times, inv_dt, mode, nodes, inv_h, e_all, de_all, tail_r,
                                         tailq_all, rho_tail_all, q_ext, R_N, origin, spacing, grid_all,
                                         qtot_all, ext_kind, ext_m, ext_a, ext_cut)
            a0 = v0 - hh * e0
            a1 = v1 - hh * e1
            a2 = v2 - hh * e2
            b0, b1, b2, f2 = total_field(t + hh, x0 + hh * v0, x1 + hh * v1, x2 + hh * v2, times, inv_dt, mode, nodes,
                                         inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                                         origin, spacing, grid_all, qtot_all, ext_kind, ext_m, ext_a, ext_cut)
            c0 = v0 - hh * b0
            c1 = v1 - hh * b1
            c2 = v2 - hh * b2
            d0, d1, d2, f3 = total_field(t + hh, x0 + hh * a0, x1 + hh * a1, x2 + hh * a2, times, inv_dt, mode, nodes,
                                         inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                                         origin, spacing, grid_all, qtot_all, ext_kind, ext_m, ext_a, ext_cut)
            g0 = v0 - h * d0
            g1 = v1 - h * d1
            g2 = v2 - h * d2
            k0, k1, k2, f4 = total_field(t + h, x0 + h * c0, x1 + h * c1, x2 + h * c2, times, inv_dt, mode, nodes,
                                         inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
                                         origin, spacing, grid_all, qtot_all, ext_kind, ext_m, ext_a, ext_cut)
            flag = flag or f1 or f2 or f3 or f4
            x0 += h / 6.0 * (v0 + 2.0 * a0 + 2.0 * c0 + g0)
            x1 += h / 6.0 * (v1 + 2.0 * a1 + 2.0 * c1 + g1)
            x2 += h / 6.0 * (v2 + 2.0 * a2 + 2.0 * c2 + g2)
            v0 -= h / 6.0 * (e0 + 2.0 * b0 + 2.0 * d0 + k0)
            v1 -= h / 6.0 * (e1 + 2.0 * b1 + 2.0 * d1 + k1)
            v2 -= h / 6.0 * (e2 + 2.0 * b2 + 2.0 * d2 + k2)
            t = t_from + (step + 1) * h
            X[p, step + 1, 0] = x0
            X[p, step + 1, 1] = x1
            X[p, step + 1, 2] = x2
            V[p, step + 1, 0] = v0
            V[p, step + 1, 1] = v1
            V[p, step + 1, 2] = v2
        flags[p] = flag
    return X, V, flags


@njit(parallel=True, cache=True)
def field_at(ts, xs, times, inv_dt, mode,
             nodes, inv_h, e_all, de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N,
             origin, spacing, grid_all, qtot_all,
             ext_kind, ext_m, ext_a, ext_cut):
    n = xs.shape[0]
    out = np.empty((n, 3))
    flags = np.zeros(n, dtype=np.bool_)
    for p in prange(n):
        e0, e1, e2, fl = total_field(ts[p], xs[p, 0], xs[p, 1], xs[p, 2], times, inv_dt, mode, nodes, inv_h, e_all,
                                     de_all, tail_r, tailq_all, rho_tail_all, q_ext, R_N, origin, spacing,
                                     grid_all, qtot_all, ext_kind, ext_m, ext_a, ext_cut)
        out[p, 0] = e0
        out[p, 1] = e1
        out[p, 2] = e2
        flags[p] = fl
    return out, flags


@njit(parallel=True, cache=True)
def radial_eval_many(rs, nodes, inv_h, e, de, tail_r, tail_q, rho_tail, q_ext, R_N):
    """Single-snapshot evaluation: e, de, tail_q are 1-D here."""
    n = rs.shape[0]
    val = np.empty(n)
    dval = np.empty(n)
    flags = np.zeros(n, dtype=np.bool_)
    e2 = e.reshape((1, e.shape[0]))
    de2 = de.reshape((1, de.shape[0]))
    tq2 = tail_q.reshape((1, tail_q.shape[0]))
    rt = np.full(1, rho_tail)
    for p in prange(n):
        a, b, f = radial_eval(rs[p], nodes, inv_h, e2, de2, 0, tail_r, tq2, rt, q_ext, R_N)
        val[p] = a
        dval[p] = b
        flags[p] = f
    return val, dval, flags
