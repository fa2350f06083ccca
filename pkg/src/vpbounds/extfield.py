"""Applied field families A(t, x) and the checker for their decay/divergence properties."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .reports import ClauseResult, ConditionReport

KINDS = ("zero", "dipole", "coulomb_tail")
KIND_CODES = {k: i for i, k in enumerate(KINDS)}

# weighted residuals below this are treated as exact zeros (roundoff only)
ROUNDOFF_FLOOR = 1e-12


@dataclass(frozen=True)
class ExternalField:
    kind: str = "zero"
    amplitude: float = 0.0
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    cutoff_radius: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown external field kind {self.kind!r}")
        if not self.cutoff_radius > 0:
            raise ValueError("cutoff_radius must be positive")

    @property
    def moment(self) -> np.ndarray:
        axis = np.asarray(self.axis, dtype=float)
        return self.amplitude * axis / np.linalg.norm(axis)

    def a_of_t(self, t) -> float:
        """Far-field Coulomb coefficient; constant in time for every shipped family."""
        return self.amplitude if self.kind == "coulomb_tail" else 0.0


def smoothstep(r, cutoff):
    """Quintic smoothstep: 0 for r <= cutoff/2, 1 for r >= cutoff, C^2 at both ends."""
    s = np.clip((np.asarray(r, dtype=float) - 0.5 * cutoff) / (0.5 * cutoff), 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def smoothstep_deriv(r, cutoff):
    s = np.clip((np.asarray(r, dtype=float) - 0.5 * cutoff) / (0.5 * cutoff), 0.0, 1.0)
    return 30.0 * s**2 * (1.0 - s) ** 2 / (0.5 * cutoff)


def eval_A(field: ExternalField, t, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if field.kind == "zero":
        return np.zeros_like(x)
    if field.kind == "dipole":
        R3 = (1.0 + np.sum(x * x, axis=-1)) ** 1.5
        return np.cross(field.moment, x) / R3[..., None]
    r = np.linalg.norm(x, axis=-1)
    q = smoothstep(r, field.cutoff_radius)
    safe_r = np.where(r > 0, r, 1.0)
    return (field.a_of_t(t) * q / safe_r**3)[..., None] * x


def eval_gradA(field: ExternalField, t, x) -> np.ndarray:
    """Jacobian J[..., i, j] = d A_i / d x_j."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (3,))
    if field.kind == "zero":
        return out
    if field.kind == "dipole":
        m = field.moment
        R2 = 1.0 + np.sum(x * x, axis=-1)
        # d/dx_j (m x x)_i = eps_{ikj} m_k, i.e. the matrix [m]_x
        mx = np.array([[0.0, -m[2], m[1]], [m[2], 0.0, -m[0]], [-m[1], m[0], 0.0]])
        cross = np.cross(m, x)
        out = mx / R2[..., None, None] ** 1.5
        out = out - 3.0 * cross[..., :, None] * x[..., None, :] / R2[..., None, None] ** 2.5
        return out
    a = field.a_of_t(t)
    r = np.linalg.norm(x, axis=-1)
    safe_r = np.where(r > 0, r, 1.0)
    q = smoothstep(r, field.cutoff_radius)
    dq = smoothstep_deriv(r, field.cutoff_radius)
    xx = x[..., :, None] * x[..., None, :]
    eye = np.eye(3)
    out = a * (dq / safe_r**4)[..., None, None] * xx
    out = out + a * q[..., None, None] * (eye / safe_r[..., None, None] ** 3 - 3.0 * xx / safe_r[..., None, None] ** 5)
    return out


def default_sample_grid(r_min: float = 0.05, r_max: float = 1.0e3, n_radii: int = 48, n_dirs: int = 64) -> np.ndarray:
    """Points on log-spaced spherical shells with Fibonacci-sphere directions."""
    radii = np.geomspace(r_min, r_max, n_radii)
    return (radii[:, None, None] * fibonacci_sphere(n_dirs)[None]).reshape(-1, 3)


def fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5.0**0.5) * k
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def _growth_exponent(r, weighted, r_from: float) -> float:
    """Log-log slope of the shell-wise sup of a weighted quantity at large radius."""
    radii = np.unique(np.round(r, 12))
    radii = radii[radii >= r_from]
    if radii.size < 3:
        return 0.0
    sups = np.array([weighted[np.isclose(r, rr, rtol=1e-10)].max() for rr in radii])
    keep = sups > ROUNDOFF_FLOOR
    if keep.sum() < 3:
        return 0.0
    slope = np.polyfit(np.log(radii[keep]), np.log(sups[keep]), 1)[0]
    return float(slope)


def _bounded_clause(name, r, weighted, note, growth_tol=0.05) -> ClauseResult:
    sup = float(np.max(weighted)) if weighted.size else 0.0
    if not np.isfinite(sup):
        return ClauseResult(name, "fail", np.inf, note)
    r_from = np.quantile(r, 0.5)
    growth = _growth_exponent(r, weighted, r_from)
    status = "pass" if growth <= growth_tol else "deviates"
    return ClauseResult(name, status, sup, f"{note}; large-radius growth exponent {growth:.3g}")


def check_condition_III(field: ExternalField, sample_grid=None, p: float = 3.5, t: float = 0.0,
                        div_tol: float = 1e-12) -> ConditionReport:
    """Numerical check of the decay, divergence-free, and far-field clauses on a grid.

    Each clause reports its measured constant (sup of the weighted quantity).
    The far-field clause is evaluated on |x| >= 1 only; a(t) x/|x|^3 is singular at
    the origin so no smooth field can satisfy it there.
    """
    x = default_sample_grid() if sample_grid is None else np.asarray(sample_grid, dtype=float).reshape(-1, 3)
    if x.size == 0:
        raise ValueError("sample_grid must be nonempty")
    r = np.linalg.norm(x, axis=-1)
    R2 = 1.0 + r * r
    A = eval_A(field, t, x)
    J = eval_gradA(field, t, x)
    clauses = [
        _bounded_clause("decay_A", r, np.linalg.norm(A, axis=-1) * R2, "sup |A| R^2 (C0)"),
        _bounded_clause("decay_gradA", r, np.abs(J).max(axis=(-1, -2)) * R2**1.5, "sup max_ij |dA_i/dx_j| R^3"),
    ]
    div = np.abs(np.trace(J, axis1=-2, axis2=-1))
    scale = max(1.0, float(np.abs(J).max()))
    sup_div = float(div.max())
    if sup_div <= div_tol * scale:
        clauses.append(ClauseResult("divergence_free", "pass", sup_div, "sup |div A| (analytic Jacobian)"))
    else:
        where = r[div > div_tol * scale]
        clauses.append(ClauseResult("divergence_free", "deviates", sup_div,
                                    f"sup |div A|; nonzero for |x| in [{where.min():.3g}, {where.max():.3g}]"))
    far = r >= 1.0
    if np.any(far):
        xf = x[far]
        tail = field.a_of_t(t) * xf / r[far, None] ** 3
        resid = np.linalg.norm(A[far] - tail, axis=-1) * R2[far] ** ((p - 1.0) / 2.0)
        clauses.append(_bounded_clause("far_field", r[far], resid, f"sup |A - a(t) x/|x|^3| R^(p-1), p={p}, |x|>=1"))
    return ConditionReport("III", clauses)


def measured_C0(field: ExternalField, sample_grid=None, t: float = 0.0) -> float:
    return check_condition_III(field, sample_grid, t=t).clause("decay_A").measured
