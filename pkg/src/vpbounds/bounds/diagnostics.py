"""Per-snapshot diagnostics assembled from a converged run."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..extfield import measured_C0
from ..kinetic import KineticState, PicardResult, f_constancy_drift, make_probes, qf_series
from ..traj import PhaseState
from .bootstrap import bootstrap_iterate
from .energy import density_energy_ratio, energy_total, field_energy, tail_energy_check
from .exponents import InfeasibleExponents, choose_exponents, field_ratio_check
from .gbu import GBUParams, gbu_decompose, measured_C1, prelim_inequalities_check
from .norms import WeightedNormRecord, fit_decay_exponent, weighted_norm


@dataclass
class DiagnosticsRecord:
    time: float
    Qf_lower: float
    Qg: float
    norms: list[WeightedNormRecord]
    energy_total: float
    tail_energy: float
    sup_E: float
    sup_gradE: float
    gbu: dict | None = None
    lemma_ratios: dict = field(default_factory=dict)

    def __post_init__(self):
        scalars = [self.time, self.Qf_lower, self.Qg, self.energy_total, self.tail_energy, self.sup_E, self.sup_gradE]
        if not all(math.isfinite(x) for x in scalars):
            raise ValueError(f"non-finite diagnostic at t = {self.time!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["norms"] = [asdict(n) for n in self.norms]
        return out


def sup_field_and_gradient(e: np.ndarray, de: np.ndarray, nodes: np.ndarray) -> tuple[float, float]:
    """sup |E| and sup |grad E| for a radial field; the Jacobian has eigenvalues e' and e/r (twice)."""
    ratio = np.zeros_like(e)
    ratio[1:] = np.abs(e[1:] / nodes[1:])
    ratio[0] = abs(de[0])
    return float(np.abs(e).max()), float(np.maximum(np.abs(de), ratio).max())


def snapshot_indices(n_nodes: int, stride: int) -> list[int]:
    idx = list(range(0, n_nodes, stride))
    if idx[-1] != n_nodes - 1:
        idx.append(n_nodes - 1)
    return idx


def _decay_fit(nodes, values, lo, hi) -> float:
    m = (nodes >= lo) & (nodes <= hi) & (np.abs(values) > 0)
    if m.sum() < 5:
        return math.nan
    return fit_decay_exponent(nodes[m], np.abs(values[m]))


def gbu_report(state: KineticState, t: float, Qf: float, probe: PhaseState, samples: int, seed: int,
               C0: float) -> dict:
    """GBU pieces at n and 2n samples plus the preliminary velocity inequalities."""
    W = state.background.W
    seed_params = GBUParams.build(Qf, W, C0, 0.0)
    C1 = measured_C1(state, t, seed_params.Q)
    params = GBUParams.build(Qf, W, C0, C1)
    runs = {}
    for label, n in (("n", samples), ("2n", 2 * samples)):
        r = gbu_decompose(state, probe, t, params, n_samples=n, seed=seed)
        runs[label] = r
    base = runs["n"]
    pts = base.phase_points
    prelim = prelim_inequalities_check(state, (pts[0][:2000], pts[1][:2000]), params, t, probe)

    def piece(r):
        return {"I_G": r.I_G, "I_B": r.I_B, "I_U": r.I_U, "I_total": r.I_total, "se_G": r.se_G, "se_B": r.se_B,
                "se_U": r.se_U, "se_sum": r.se_sum, "partition_gap": r.partition_gap, "ratios": r.ratios,
                "n_samples": r.n_samples}

    return {"params": asdict(params), "invariants": params.invariants(W), "delta_used": base.delta_used,
            "delta_truncated": base.truncated, "probe": {"x": list(probe.x), "v": list(probe.v)},
            "runs": {k: piece(v) for k, v in runs.items()},
            "prelim": {"violations": prelim.violations, "checked": prelim.checked,
                       "max_drift_over_P": prelim.max_drift_over_P}}


@dataclass
class RunDiagnostics:
    records: list[DiagnosticsRecord]
    snapshot_index: list[int]
    summary: dict


def assemble(result: PicardResult, scenario) -> RunDiagnostics:
    """Everything the run command writes, computed once from the converged result."""
    state = result.state
    history = result.history
    diag = scenario.diagnostics
    W = state.background.W
    idx = snapshot_indices(len(result.node_times), scenario.time.snapshot_stride)
    times = np.asarray(result.node_times)[idx]
    probes = make_probes(state.background, state.initial, diag.n_qf_probes, scenario.seed)
    qf = qf_series(state, times, probes)
    try:
        sel = choose_exponents(diag.lemma_q)
    except InfeasibleExponents:
        sel = None
    r_probe = np.linspace(1.0, float(history.nodes[-1]), 64)
    probe_pts = np.zeros((r_probe.size, 3))
    probe_pts[:, 0] = r_probe

    records = []
    conserved = []
    decay = []
    lemma = []
    for j, t, qfl in zip(idx, times, qf):
        t = float(t)
        rho = result.densities[j]
        norms = [weighted_norm(rho, q) for q in diag.q_list]
        etot = energy_total(state, t)
        lhs, rhs = tail_energy_check(state, t, 2.0 * W, energy=etot)
        sup_e, sup_ge = sup_field_and_gradient(history.e_all[j], history.de_all[j], history.nodes)
        ratios = {"tail_energy_rhs": rhs}
        de = density_energy_ratio(state, t, history.nodes)
        ratios["density_energy"] = de.sup_ratio
        ratios["density_energy_abs_g"] = de.sup_ratio_abs_g
        ratios["density_energy_resolved_radius"] = de.resolved_radius
        if sel is not None:
            fr = field_ratio_check(history, t, diag.lemma_q, sel, probe_pts)
            ratios["sup_E_ratio"] = fr.sup_E_ratio
            ratios["sup_gradE_ratio"] = fr.sup_gradE_ratio
            ratios["E_decay_exponent"] = fr.E_decay_exponent
            lemma.append({"time": t, **asdict(fr)})
        records.append(DiagnosticsRecord(t, float(qfl), max(W, float(qfl)), norms, etot, lhs, sup_e, sup_ge,
                                         lemma_ratios=ratios))
        conserved.append({"time": t, "kinetic": etot, "field": field_energy(state, t)})
        decay.append({"time": t, "rho_decay_exponent": _decay_fit(rho.nodes, rho.values, *diag.decay_fit_range)})

    C0 = measured_C0(history.external)
    summary = {
        "picard": {"iterations": result.iterations, "residuals": list(result.residuals),
                   "v_cap": state.v_cap, "v_cap_upper_proxy": result.v_cap_upper_proxy,
                   "f_constancy_drift": f_constancy_drift(
                       state, make_probes(state.background, state.initial, diag.n_fconst_probes, scenario.seed + 1),
                       float(times[-1]))},
        "measured_constants": {"C0": C0},
        "energy": [dict(c, total=c["kinetic"] + c["field"]) for c in conserved],
        "decay_fits": decay,
        "field_ratios": lemma,
        "exponents": None if sel is None else {k: str(getattr(sel, k)) for k in
                                               ("q", "a", "b", "m_small", "m_large", "n_small", "n_large")},
    }
    # Q(t) follows the GBU recipe at every snapshot; the bootstrap replays its subdivision
    base = max((2.0 * W) ** (4.0 / 3.0), C0) ** (15.0 / 13.0)
    Q_series = base + qf
    t_end = float(times[-1])
    if diag.gbu.enabled and t_end > 0:
        probe = PhaseState(tuple(diag.gbu.probe.x), tuple(diag.gbu.probe.v))
        g = gbu_report(state, t_end, float(qf[-1]), probe, diag.gbu.samples, scenario.seed, C0)
        summary["gbu"] = g
        records[-1].gbu = {"I_G": g["runs"]["n"]["I_G"], "I_B": g["runs"]["n"]["I_B"],
                           "I_U": g["runs"]["n"]["I_U"], "ratios": g["runs"]["n"]["ratios"]}
        C2 = g["params"]["C2"]
        summary["measured_constants"].update(C1=g["params"]["C1"], C2=C2)
    else:
        C2 = 0.0
    summary["bootstrap"] = bootstrap_summary(times, Q_series, C2)
    return RunDiagnostics(records, idx, summary)


def bootstrap_summary(times, Q_series, C2: float) -> dict:
    """Replay the subdivision on the measured Q(t); T1 is where Delta stops being truncated to t."""
    times = np.asarray(times, dtype=float)
    Q_series = np.maximum.accumulate(np.asarray(Q_series, dtype=float))
    pos = times > 0
    if C2 <= 0 or pos.sum() < 2:
        return {"status": "skipped", "reason": "no field history to subdivide"}
    t, Q = times[pos], Q_series[pos]
    step = Q ** (-41.0 / 60.0) / (4.0 * C2)
    beyond = np.nonzero(t > step)[0]
    if beyond.size == 0:
        return {"status": "degenerate", "T1": None, "min_step": float(step.min()), "t_end": float(t[-1])}
    T1 = float(t[beyond[0]])
    res = bootstrap_iterate(t, Q, C2, T1, float(t[-1]))
    return {"status": "replayed", "T1": T1, "k": res.k, "bound": res.bound, "checks": res.checks,
            "uniform_lower_bound": res.uniform_lower_bound}
