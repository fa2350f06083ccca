import time
from pathlib import Path

import numpy as np
import pytest

from vpbounds.background import BackgroundProfile
from vpbounds.cli.scenario import load_scenario
from vpbounds.coulomb import RadialDensity, solve_field_radial
from vpbounds.kinetic import InitialPerturbation, KineticState, picard_solve
from vpbounds.traj import FieldHistory

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

# criterion number -> (passed, detail); printed at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(n: int, ok: bool, detail: str):
        prev = CRITERIA.get(n)
        # a criterion split over several tests passes only if every part does
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}"
        CRITERIA[n] = (bool(ok), detail)
        return ok

    return _record


@pytest.fixture(scope="session")
def small_run():
    sc = load_scenario(SCENARIOS / "small.yaml")
    return sc, picard_solve(sc)


@pytest.fixture(scope="session")
def acceptance_run():
    sc = load_scenario(SCENARIOS / "acceptance.yaml")
    t0 = time.perf_counter()
    res = picard_solve(sc)
    return sc, res, time.perf_counter() - t0


def gaussian_history(t_end=2.0, n_times=11, r_max=30.0, n_nodes=1201, external=None):
    """Smooth, slowly varying radial field for integrator tests."""
    nodes = np.linspace(0.0, r_max, n_nodes)
    times = np.linspace(0.0, t_end, n_times)
    states = [solve_field_radial(RadialDensity(nodes, (1.0 + 0.5 * t) * np.exp(-nodes**2)), t) for t in times]
    return FieldHistory(times, states, external)


def zero_state(t_end=1.0, dt=0.05, family="algebraic_r6", amplitude=0.05, scale=1.0, n_u=16, n_mu=8):
    bg = BackgroundProfile(1.0, 1.0)
    init = InitialPerturbation(family, amplitude, (0.0, 0.0, 0.0), scale, bg.W)
    hist = FieldHistory.zero(np.arange(0.0, t_end + dt / 2, dt))
    return KineticState(hist, bg, init, bg.W, dt, n_u, n_mu)
