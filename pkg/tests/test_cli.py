import csv
import json
from pathlib import Path

import pytest

from vumopt.cli import BUS_HEADER, IBR_HEADER, main
from vumopt.model import save_scenario
from vumopt.scenarios import CASE1, chain_feeder, two_bus

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def case1_file(tmp_path):
    path = tmp_path / "case1.json"
    save_scenario(two_bus(CASE1, "case1"), path)
    return path


@pytest.fixture
def solved(tmp_path, case1_file):
    out = tmp_path / "out"
    code = main(["solve", "--scenario", str(case1_file), "--strategy", "s3", "--out", str(out)])
    return code, out


def test_solve_writes_outputs(solved):
    code, out = solved
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "optimal" and report["feasible"]
    buses = read_csv(out / "buses.csv")
    assert tuple(buses[0]) == BUS_HEADER
    assert [r[0] for r in buses[1:]] == ["1", "2"]
    ibrs = read_csv(out / "ibrs.csv")
    assert tuple(ibrs[0]) == IBR_HEADER
    assert ibrs[1][:2] == ["IBR-1", "2"]


def test_csv_numbers_use_ten_significant_digits(solved):
    _, out = solved
    report = json.loads((out / "report.json").read_text())
    row = read_csv(out / "buses.csv")[2]
    assert row[1] == format(report["buses"][1]["v_plus"], ".10g")
    assert float(row[1]) == pytest.approx(report["buses"][1]["v_plus"], rel=1e-9)


def test_verify_accepts_solve_report(solved, case1_file, capsys):
    _, out = solved
    assert main(["verify", "--scenario", str(case1_file), "--injections", str(out / "report.json")]) == 0
    assert "all exact constraints satisfied" in capsys.readouterr().out


def test_verify_flags_overcurrent_by_phase(tmp_path, case1_file, capsys):
    inj = tmp_path / "inj.json"
    inj.write_text(json.dumps({"2": [0.8, 0.0, 0.3, 0.0]}))
    assert main(["verify", "--scenario", str(case1_file), "--injections", str(inj)]) == 4
    err = capsys.readouterr().err
    assert "phase_current bus 2 a" in err


def test_verify_flags_floor_at_zero_injection(tmp_path, case1_file, capsys):
    inj = tmp_path / "zero.json"
    inj.write_text(json.dumps({"2": [0, 0, 0, 0]}))
    assert main(["verify", "--scenario", str(case1_file), "--injections", str(inj)]) == 4
    assert "p_floor" in capsys.readouterr().err


@pytest.mark.parametrize(
    "payload, message",
    [({"3": [0, 0, 0, 0]}, "do not match"), ({"2": [0, 0, 0]}, "four numbers"), ({"x": [0, 0, 0, 0]}, "integer")],
)
def test_verify_rejects_malformed_injections(tmp_path, case1_file, capsys, payload, message):
    inj = tmp_path / "inj.json"
    inj.write_text(json.dumps(payload))
    assert main(["verify", "--scenario", str(case1_file), "--injections", str(inj)]) == 1
    assert message in capsys.readouterr().err


def test_cycle_names_offending_lines(tmp_path, capsys):
    code = main(["solve", "--scenario", str(SCENARIOS / "bad_cycle.json"), "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    assert "offending lines: 1, 2, 4" in err


def test_missing_field_is_named(tmp_path, capsys):
    code = main(["solve", "--scenario", str(SCENARIOS / "bad_field.json"), "--out", str(tmp_path)])
    assert code == 1
    assert "lines[1].r" in capsys.readouterr().err


def test_missing_file_is_input_error(tmp_path):
    assert main(["solve", "--scenario", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1


def test_infeasible_exit_code(tmp_path):
    path = tmp_path / "tight.json"
    save_scenario(two_bus(CASE1, p_min=1.15, q_min=0.5), path)
    assert main(["solve", "--scenario", str(path), "--out", str(tmp_path / "o")]) == 2


def test_non_convergence_exit_code(tmp_path, capsys):
    path = tmp_path / "chain.json"
    save_scenario(chain_feeder(6, (3, 6), CASE1), path)
    code = main(["solve", "--scenario", str(path), "--max-sc-iters", "1", "--out", str(tmp_path / "o")])
    assert code == 3
    assert "did not settle" in capsys.readouterr().err
    assert json.loads((tmp_path / "o" / "report.json").read_text())["status"] == "non_converged"


def test_compare_writes_scatter(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--scenario", str(SCENARIOS / "balanced.json"), "--out", str(out)]) == 0
    doc = json.loads((out / "compare.json").read_text())
    assert set(doc["j_exact"]) == {"s1", "s2", "s3"}
    rows = read_csv(out / "scatter.csv")
    assert rows[0] == ["strategy", "bus", "v_plus", "v_minus"]
    assert len(rows) == 1 + 3 * len(doc["reports"]["s1"]["regulated"])


def test_runs_are_deterministic(tmp_path, case1_file):
    docs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["solve", "--scenario", str(case1_file), "--seed", "7", "--out", str(out)]) == 0
        doc = json.loads((out / "report.json").read_text())
        doc["diagnostics"].pop("elapsed_s")
        docs.append(doc)
        assert doc["diagnostics"]["settings"]["seed"] == 7
    assert docs[0] == docs[1]
    assert (tmp_path / "run0" / "buses.csv").read_text() == (tmp_path / "run1" / "buses.csv").read_text()


def test_heuristic_only_flag(tmp_path, case1_file):
    out = tmp_path / "h"
    assert main(["solve", "--scenario", str(case1_file), "--heuristic-only", "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["diagnostics"]["settings"]["heuristic_only"] is True
    assert doc["diagnostics"]["bb_certified"] is False


@pytest.mark.parametrize("argv", [["solve"], ["solve", "--scenario", "x", "--gap", "-1"], ["nope"]])
def test_argument_errors_exit_nonzero(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code != 0
