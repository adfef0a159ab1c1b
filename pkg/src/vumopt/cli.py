"""Command-line front end: ``vumopt solve | verify | compare``.

Exit codes: 0 success, 1 bad input, 2 infeasible, 3 no settled solution
(non-convergence or subproblem failure), 4 verification found violations.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from .model import ModelError, Scenario, ScenarioError, TopologyError, load_scenario
from .orchestrator import (
    NON_CONVERGED,
    ComparisonReport,
    RunSettings,
    SolveReport,
    Strategy,
    compare_strategies,
    run_strategy,
)
from .seqflow import InjectionSet, verify_solution
from .solver import FAILURE, INFEASIBLE, OPTIMAL, SolverSettings

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_UNSETTLED = 3
EXIT_VIOLATION = 4

log = logging.getLogger("vumopt")


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return format(value, ".10g")
    return value


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, allow_nan=True) + "\n")


BUS_HEADER = ("bus", "v_plus", "v_minus", "vuf", "angle_plus_deg", "angle_minus_deg")
IBR_HEADER = (
    "ibr",
    "bus",
    "id_plus",
    "iq_plus",
    "id_minus",
    "iq_minus",
    "i_a",
    "i_b",
    "i_c",
    "p",
    "q",
    "s",
    "s_utilization",
)


def write_solve_outputs(report: SolveReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    write_csv(out / "buses.csv", BUS_HEADER, [[row[k] for k in BUS_HEADER] for row in report.buses])
    rows = []
    for k, row in enumerate(report.ibrs, start=1):
        rows.append([f"IBR-{k}"] + [row[h] for h in IBR_HEADER[1:]])
    write_csv(out / "ibrs.csv", IBR_HEADER, rows)


def write_compare_outputs(comparison: ComparisonReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "compare.json", comparison.to_dict())
    write_csv(
        out / "scatter.csv",
        ("strategy", "bus", "v_plus", "v_minus"),
        [[r["strategy"], r["bus"], r["v_plus"], r["v_minus"]] for r in comparison.scatter],
    )


def exit_code_for(status: str) -> int:
    if status == OPTIMAL:
        return EXIT_OK
    if status == INFEASIBLE:
        return EXIT_INFEASIBLE
    # non-convergence, node limit and subproblem failure all leave no settled optimum
    return EXIT_UNSETTLED


def _settings(args: argparse.Namespace) -> RunSettings:
    solver = SolverSettings(
        absolute_gap=args.gap,
        heuristic_only=args.heuristic_only,
        seed=args.seed,
    )
    return RunSettings(
        solver=solver,
        lam=args.lam,
        max_sc_iters=args.max_sc_iters,
        polygon_sides=args.polygon_sides,
        big_m=args.big_m,
    )


def _load_injections(path: str, scenario: Scenario) -> InjectionSet:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", where=path) from exc
    except OSError as exc:
        raise ScenarioError(str(exc), where=path) from exc
    if isinstance(data, dict) and "injections" in data:
        data = data["injections"]
    if not isinstance(data, dict):
        raise ScenarioError("expected an object mapping bus -> [Id+, Iq+, Id-, Iq-]", where="injections")
    parsed = {}
    for key, value in data.items():
        where = f"injections[{key}]"
        try:
            bus = int(key)
        except ValueError as exc:
            raise ScenarioError("bus key must be an integer", where=where) from exc
        if not isinstance(value, list) or len(value) != 4:
            raise ScenarioError("expected four numbers [Id+, Iq+, Id-, Iq-]", where=where)
        try:
            parsed[bus] = [float(v) for v in value]
        except (TypeError, ValueError) as exc:
            raise ScenarioError("entries must be numbers", where=where) from exc
    if set(parsed) != set(scenario.ibr_buses):
        raise ScenarioError(
            f"injection buses {sorted(parsed)} do not match IBR buses {list(scenario.ibr_buses)}", where="injections"
        )
    return InjectionSet.from_dict(parsed)


def cmd_solve(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    report = run_strategy(scenario, Strategy.parse(args.strategy), _settings(args))
    write_solve_outputs(report, Path(args.out))
    print(f"{scenario.name}: strategy {report.strategy} status {report.status} J={report.j_exact:.6g}")
    if report.status == NON_CONVERGED:
        print("successive convexification did not settle; the best feasible iterate was reported", file=sys.stderr)
    for check in (c for c in report.verification if not c["ok"]):
        print(f"violation: {check['kind']} bus {check['bus']} {check['detail']} margin {check['margin']:.3e}", file=sys.stderr)
    return exit_code_for(report.status)


def cmd_verify(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    inj = _load_injections(args.injections, scenario)
    result = verify_solution(scenario, inj)
    for check in result.checks:
        print(check.describe())
    for check in result.polygon_excursions:
        print(check.describe() + " (informational)")
    if result.feasible:
        print("all exact constraints satisfied")
        return EXIT_OK
    for check in result.violations:
        print(f"violation: {check.kind} bus {check.bus} {check.detail} margin {check.margin:.3e}", file=sys.stderr)
    return EXIT_VIOLATION


def cmd_compare(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    comparison = compare_strategies(scenario, _settings(args))
    write_compare_outputs(comparison, Path(args.out))
    for name, rep in comparison.reports.items():
        print(f"{name}: status {rep.status} J={rep.j_exact:.6g}")
    for name, err in comparison.errors.items():
        print(f"{name}: {err}", file=sys.stderr)
    statuses = [rep.status for rep in comparison.reports.values()]
    if len(statuses) < 3 or any(s == FAILURE for s in statuses):
        return EXIT_UNSETTLED
    if any(s == INFEASIBLE for s in statuses):
        return EXIT_INFEASIBLE
    return max(exit_code_for(s) for s in statuses)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _nonnegative(text: str) -> float:
    value = float(text)
    if not math.isfinite(value) or value < 0:
        raise argparse.ArgumentTypeError("must be a finite non-negative number")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vumopt", description="Coordinated sequence-current voltage support for IBRs")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, solve: bool = True) -> None:
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        if not solve:
            return
        p.add_argument("--lambda", dest="lam", type=_nonnegative, default=1.0, help="positive-sequence weight")
        p.add_argument("--polygon-sides", type=int, default=None, help="override the scenario's polygon sides")
        p.add_argument("--big-m", type=float, default=None, help="override the scenario's big-M")
        p.add_argument("--gap", type=_nonnegative, default=SolverSettings.absolute_gap, help="absolute B&B gap")
        p.add_argument("--max-sc-iters", type=_positive_int, default=RunSettings.max_sc_iters)
        p.add_argument("--heuristic-only", action="store_true", help="skip branching; the result is not certified")
        p.add_argument("--seed", type=int, default=0, help="recorded in the report")
        p.add_argument("--out", default=".", help="output directory")

    p_solve = sub.add_parser("solve", help="optimize one strategy")
    common(p_solve)
    p_solve.add_argument("--strategy", choices=[s.value for s in Strategy], default="s3")
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser("verify", help="check injections against the exact constraints")
    common(p_verify, solve=False)
    p_verify.add_argument("--injections", required=True, help="report.json or {bus: [Id+, Iq+, Id-, Iq-]} file")
    p_verify.set_defaults(func=cmd_verify)

    p_compare = sub.add_parser("compare", help="run S1, S2 and S3 and score them on the common objective")
    common(p_compare)
    p_compare.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except TopologyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.line_ids:
            print(f"offending lines: {', '.join(str(i) for i in exc.line_ids)}", file=sys.stderr)
        return EXIT_INPUT
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
