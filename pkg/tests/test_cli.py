import csv
import io
import json
import math

import numpy as np
import pytest

from conftest import ROOT, SCENARIOS
from vpbounds.cli.main import (EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, DiagnoseError, diagnose, fmt, main,
                               oracle, run, validate)
from vpbounds.cli.scenario import (ScenarioParseError, ScenarioValidationError, load_scenario, parse_scenario,
                                   serialize_scenario)

GOLDEN = ROOT / "tests" / "golden"


@pytest.fixture(scope="module")
def small_outputs(tmp_path_factory):
    sc = load_scenario(SCENARIOS / "small.yaml")
    dirs = []
    for k in range(2):
        d = tmp_path_factory.mktemp(f"small{k}")
        assert run(sc, d) == EXIT_OK
        dirs.append(d)
    return dirs


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_golden_schema(small_outputs):
    d = small_outputs[0]
    assert (d / "diagnostics.csv").read_text().splitlines()[0] + "\n" == (GOLDEN / "diagnostics_header.csv").read_text()
    profiles = sorted(d.glob("profiles_*.csv"))
    assert profiles
    for p in profiles:
        assert p.read_text().splitlines()[0] + "\n" == (GOLDEN / "profiles_header.csv").read_text()
    assert (d / "summary.json").exists() and (d / "run.log").exists()


def test_rerun_is_byte_identical(small_outputs):
    a, b = small_outputs
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_floats_round_trip(small_outputs):
    rows = _rows(small_outputs[0] / "diagnostics.csv")
    iters = rows[0].index("picard_iters")
    for row in rows[1:]:
        assert str(int(row[iters])) == row[iters]
        for i, cell in enumerate(row):
            if i != iters:
                assert fmt(float(cell)) == cell


def test_summary_has_every_check(small_outputs):
    summary = json.loads((small_outputs[0] / "summary.json").read_text())
    for key in ("conditions", "measured_constants", "gbu", "bootstrap", "decay_fits", "energy", "field_ratios",
                "exponents", "picard"):
        assert key in summary, key


def test_zero_amplitude_rows(tmp_path):
    sc = load_scenario(SCENARIOS / "zero_amplitude.yaml")
    assert run(sc, tmp_path) == EXIT_OK
    rows = _rows(tmp_path / "diagnostics.csv")
    head = rows[0]
    norm_cols = [i for i, h in enumerate(head) if h.startswith("norm_q")]
    sup_e = head.index("sup_e")
    for row in rows[1:]:
        assert all(float(row[i]) == 0.0 for i in norm_cols)
        assert float(row[sup_e]) == 0.0


def test_diagnose_recomputes_from_outputs(small_outputs):
    out = diagnose(small_outputs[0], stream=io.StringIO())
    summary = json.loads((small_outputs[0] / "summary.json").read_text())
    rows = _rows(small_outputs[0] / "diagnostics.csv")
    head = rows[0]
    assert len(out["snapshots"]) == len(rows) - 1
    for snap, row in zip(out["snapshots"], rows[1:]):
        for q in summary["scenario"]["diagnostics"]["q_list"]:
            label = f"norm_q{q:g}"
            assert snap[label] == pytest.approx(float(row[head.index(label)]), rel=1e-12)


def test_diagnose_empty_directory(tmp_path):
    with pytest.raises(DiagnoseError, match="missing profiles"):
        diagnose(tmp_path)
    assert main(["diagnose", str(tmp_path)]) == EXIT_VALIDATION


def test_validate_shipped_scenario():
    buf = io.StringIO()
    assert validate(load_scenario(SCENARIOS / "acceptance.yaml"), buf) == EXIT_OK
    assert "all conditions pass" in buf.getvalue()


def test_minimal_text_gives_defaults():
    sc = parse_scenario("seed: 0\n")
    assert sc.grid.r_max == 40.0 and sc.grid.N_r == 256 and sc.time.dt == 0.02
    assert sc.picard.tol == 1e-6 and sc.diagnostics.q_list == [3.0, 3.5, 6.0]


def test_dt_zero_names_the_field():
    with pytest.raises(ScenarioValidationError, match="time.dt"):
        parse_scenario("time:\n  dt: 0\n")


def test_unknown_key_rejected():
    with pytest.raises(ScenarioValidationError):
        parse_scenario("grid:\n  r_maxx: 10\n")


def test_parse_error_has_line():
    with pytest.raises(ScenarioParseError, match="line 3, column 2"):
        parse_scenario("grid:\n  r_max: 1\n bad\n")


def test_q_beyond_tail_exponent_rejected():
    with pytest.raises(ScenarioValidationError):
        parse_scenario("diagnostics:\n  q_list: [3.0, 7.0]\n")


def test_acceptance_round_trip():
    sc = load_scenario(SCENARIOS / "acceptance.yaml")
    text = serialize_scenario(sc)
    again = parse_scenario(text)
    assert again == sc
    assert serialize_scenario(again) == text


def test_cli_validate_exit_codes(tmp_path):
    assert main(["validate", str(SCENARIOS / "acceptance.yaml")]) == EXIT_OK
    bad = tmp_path / "bad.yaml"
    bad.write_text("time:\n  dt: 0\n")
    assert main(["validate", str(bad)]) == EXIT_VALIDATION


def test_cli_numerical_failure_exit(tmp_path):
    sc = tmp_path / "tight.yaml"
    text = (SCENARIOS / "small.yaml").read_text() + "picard:\n  tol: 1.0e-300\n  max_iter: 1\n"
    sc.write_text(text)
    assert main(["run", str(sc), "--out", str(tmp_path / "out")]) == EXIT_NUMERICAL


def test_oracle_uniform_ball():
    buf = io.StringIO()
    assert oracle(load_scenario(SCENARIOS / "small.yaml"), 1.0, 20, stream=buf) == EXIT_OK
    lines = buf.getvalue().splitlines()
    assert lines[0] == "radius,fast,oracle,rel_err"
    table = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:21]])
    assert table.shape == (20, 4) and table[:, 3].max() <= 1e-3
    assert math.isfinite(float(lines[-1].split()[-1]))
