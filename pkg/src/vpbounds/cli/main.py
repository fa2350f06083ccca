"""Command-line entry point: run, validate, oracle, diagnose."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .. import configure_workers
from ..coulomb import FieldSolveError, OracleConvergenceError, RadialDensity, oracle_field, solve_field_radial
from ..kinetic import PicardConvergenceError, compute_rho
from .scenario import Scenario, ScenarioError, load_scenario

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
log = logging.getLogger("vpbounds")

BASE_COLUMNS = ["time", "qf_lower", "qg"]
TAIL_COLUMNS = ["energy_total", "tail_energy", "sup_e", "sup_grad_e", "picard_iters", "picard_residual"]
PROFILE_COLUMNS = ["r", "rho", "e_field"]
ORACLE_RTOL = 5e-4


class DiagnoseError(Exception):
    exit_code = EXIT_VALIDATION


def fmt(x) -> str:
    """Round-trip decimal text for floats, plain text for ints."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def q_label(q: float) -> str:
    return f"norm_q{q:g}"


def diagnostics_columns(q_list) -> list[str]:
    return BASE_COLUMNS + [q_label(q) for q in q_list] + TAIL_COLUMNS


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan; keep them readable as strings
        return x if math.isfinite(x) else repr(x)
    return obj


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _setup_log(path: Path) -> logging.Handler:
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("vpbounds")
    root.setLevel(logging.INFO)
    root.addHandler(handler)
    return handler


def run(scenario: Scenario, out_dir) -> int:
    """Solve, assemble diagnostics and write the output files."""
    from ..bounds.diagnostics import assemble
    from ..kinetic import picard_solve

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    handler = _setup_log(out / "run.log")
    try:
        scenario.check_runnable()
        log.info("threads %d", configure_workers())
        result = picard_solve(scenario)
        log.info("picard converged in %d sweeps", result.iterations)
        diag = assemble(result, scenario)
        q_list = scenario.diagnostics.q_list
        rows = []
        for rec in diag.records:
            rows.append([rec.time, rec.Qf_lower, rec.Qg, *[n.value for n in rec.norms], rec.energy_total,
                         rec.tail_energy, rec.sup_E, rec.sup_gradE, result.iterations, result.residuals[-1]])
        write_csv(out / "diagnostics.csv", diagnostics_columns(q_list), rows)
        nodes = result.history.nodes
        for k, j in enumerate(diag.snapshot_index):
            rho = result.densities[j]
            write_csv(out / f"profiles_{k}.csv", PROFILE_COLUMNS,
                      zip(nodes, rho.values, result.history.e_all[j]))
        summary = {
            "scenario": scenario.model_dump(mode="json"),
            "snapshots": [{"index": k, "time": float(result.node_times[j])} for k, j in
                          enumerate(diag.snapshot_index)],
            "conditions": {k: r.to_dict() for k, r in scenario.reports.items()},
            "records": [r.to_dict() for r in diag.records],
            **diag.summary,
        }
        (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=1, sort_keys=True) + "\n",
                                          encoding="utf-8")
        log.info("wrote %d snapshots", len(diag.records))
        return EXIT_OK
    finally:
        logging.getLogger("vpbounds").removeHandler(handler)
        handler.close()


def validate(scenario: Scenario, stream=sys.stdout) -> int:
    ok = True
    for key, report in scenario.reports.items():
        for c in report.clauses:
            stream.write(f"condition {key} {c.name}: {c.status} (measured {c.measured!r}) {c.note}\n".rstrip() + "\n")
        ok = ok and report.passed
    stream.write("all conditions pass\n" if ok else "some conditions fail\n")
    return EXIT_OK if ok else EXIT_VALIDATION


def uniform_ball_density(radius: float, r_max: float, n: int) -> RadialDensity:
    nodes = np.unique(np.concatenate([np.linspace(0.0, r_max, n + 1), [radius, radius * (1.0 + 1e-12)]]))
    return RadialDensity(nodes, np.where(nodes <= radius, 1.0, 0.0))


def oracle_table(rho: RadialDensity, rho_3d, radii, domain_radius: float, rtol: float = ORACLE_RTOL):
    """Rows (radius, fast, oracle, rel_err) comparing the radial solve with direct quadrature along e_1."""
    state = solve_field_radial(rho)
    rows = []
    for r in radii:
        x = np.array([r, 0.0, 0.0])
        fast = float(state.E(x[None])[0, 0])
        exact = float(oracle_field(rho_3d, x, domain_radius=domain_radius, rtol=rtol)[0])
        rows.append((float(r), fast, exact, abs(fast - exact) / abs(exact) if exact != 0 else abs(fast)))
    return rows


def oracle(scenario: Scenario, ball_radius: float | None, n_radii: int, stream=sys.stdout) -> int:
    radii = np.geomspace(0.1, 10.0, n_radii)
    if ball_radius is not None:
        r_max = max(12.0, 1.2 * ball_radius)
        rho = uniform_ball_density(ball_radius, r_max, 400)

        def rho_3d(p):
            return (np.sum(p * p, axis=-1) <= ball_radius**2).astype(float)
    else:
        from ..kinetic import KineticState
        from ..traj import FieldHistory

        bg = scenario.background.build()
        init = scenario.perturbation.build(bg)
        nodes = np.linspace(0.0, scenario.grid.r_max, scenario.grid.N_r + 1)
        st = KineticState(FieldHistory.zero([0.0], scenario.extfield.build(), nodes), bg, init, bg.W,
                          scenario.time.dt, scenario.grid.N_u, scenario.grid.N_mu,
                          extrapolation_exponent=scenario.grid.extrapolation_exponent)
        rho = compute_rho(st, 0.0, nodes)
        r_max = scenario.grid.r_max

        def rho_3d(p):
            return rho.value(np.linalg.norm(p, axis=-1))
    rows = oracle_table(rho, rho_3d, radii, domain_radius=r_max)
    stream.write("radius,fast,oracle,rel_err\n")
    for row in rows:
        stream.write(",".join(fmt(x) for x in row) + "\n")
    worst = max(r[3] for r in rows)
    stream.write(f"max rel_err {worst!r}\n")
    return EXIT_OK if worst <= 1e-3 else EXIT_NUMERICAL


def diagnose(run_dir, stream=sys.stdout) -> dict:
    """Recompute the offline checks from profiles_*.csv and summary.json."""
    from ..bounds.exponents import choose_exponents, field_ratios
    from ..bounds.norms import fit_decay_exponent, weighted_norm

    d = Path(run_dir)
    profiles = sorted(d.glob("profiles_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not profiles:
        raise DiagnoseError(f"missing profiles in {d}")
    summary_path = d / "summary.json"
    if not summary_path.exists():
        raise DiagnoseError(f"missing summary.json in {d}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    diag_cfg = summary["scenario"]["diagnostics"]
    q_ext = summary["scenario"]["grid"]["extrapolation_exponent"]
    sel = choose_exponents(diag_cfg["lemma_q"])
    lo, hi = diag_cfg["decay_fit_range"]
    out = {"snapshots": []}
    for p in profiles:
        data = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
        r, rho_v, e = data[:, 0], data[:, 1], data[:, 2]
        rho = RadialDensity(r, rho_v, q_ext)
        norms = {q_label(q): weighted_norm(rho, q).value for q in diag_cfg["q_list"]}
        m = (r >= lo) & (r <= hi) & (np.abs(rho_v) > 0)
        decay = fit_decay_exponent(r[m], np.abs(rho_v[m])) if m.sum() >= 5 else math.nan
        far = r >= 1.0
        fr = field_ratios(r[far], np.abs(e[far]), None, weighted_norm(rho, diag_cfg["lemma_q"]).value, sel)
        snap = {"profile": p.name, **norms, "rho_decay_exponent": decay, "sup_E_ratio": fr.sup_E_ratio,
                "E_decay_exponent": fr.E_decay_exponent, "sup_e": float(np.abs(e).max())}
        out["snapshots"].append(snap)
        stream.write(" ".join(f"{k}={fmt(v) if not isinstance(v, str) else v}" for k, v in snap.items()) + "\n")
    gbu = summary.get("gbu")
    if gbu:
        out["gbu_prelim_violations"] = sum(gbu["prelim"]["violations"].values())
        stream.write(f"gbu prelim violations {out['gbu_prelim_violations']}\n")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vpbounds", description="Vlasov-Poisson perturbation runs and bound checks")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="solve a scenario and write diagnostics")
    r.add_argument("scenario")
    r.add_argument("--out", required=True)
    v = sub.add_parser("validate", help="check the scenario's conditions only")
    v.add_argument("scenario")
    o = sub.add_parser("oracle", help="compare the fast field solve with direct quadrature")
    o.add_argument("scenario")
    o.add_argument("--uniform-ball", type=float, default=None, metavar="RADIUS",
                   help="use a uniform unit-density ball instead of the scenario's initial density")
    o.add_argument("--radii", type=int, default=20)
    d = sub.add_parser("diagnose", help="recompute bound checks from a run directory")
    d.add_argument("run_dir")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "diagnose":
            diagnose(args.run_dir)
            return EXIT_OK
        scenario = load_scenario(args.scenario)
        if args.command == "validate":
            return validate(scenario)
        if args.command == "oracle":
            return oracle(scenario, args.uniform_ball, args.radii)
        return run(scenario, args.out)
    except (ScenarioError, DiagnoseError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PicardConvergenceError, FieldSolveError, OracleConvergenceError, FloatingPointError, ValueError,
            RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
