import dataclasses
import json
import math

import numpy as np
import pytest

from vumopt.model import Phasor, Scenario, build_model
from vumopt.orchestrator import (
    NON_CONVERGED,
    RunSettings,
    SolveReport,
    Strategy,
    compare_strategies,
    exact_objective,
    objective_config,
    run_strategy,
)
from vumopt.scenarios import BALANCED, CASE1, CASE2, chain_feeder, experiment_feeder, two_bus
from vumopt.seqflow import InjectionSet, solve_sequence_flow, verify_solution
from vumopt.solver import INFEASIBLE, OPTIMAL

from .oracles import scenario_j


@pytest.fixture(scope="module")
def case1_s3():
    return run_strategy(two_bus(CASE1, "case1"), Strategy.S3)


def test_strategy_parse():
    assert Strategy.parse("S2") is Strategy.S2
    with pytest.raises(ValueError):
        Strategy.parse("s4")


def test_objective_configs(case1):
    s = RunSettings(lam=0.3)
    assert (objective_config(Strategy.S1, case1, s).alpha, objective_config(Strategy.S1, case1, s).lam) == (0.0, 1.0)
    assert (objective_config(Strategy.S2, case1, s).alpha, objective_config(Strategy.S2, case1, s).lam) == (1.0, 0.0)
    assert objective_config(Strategy.S3, case1, s).lam == 0.3


def test_run_settings_validation():
    with pytest.raises(ValueError):
        RunSettings(linearization="quadratic")


def test_exact_objective_matches_oracle(case1, case1_model, rng):
    inj = InjectionSet((2,), rng.uniform(-0.3, 0.3, (1, 4)))
    flow = solve_sequence_flow(case1_model, case1.v0_plus, case1.v0_minus, inj)
    assert exact_objective(case1, flow, lam=0.7) == pytest.approx(scenario_j(case1, inj.as_dict(), lam=0.7), rel=1e-12)


def test_case1_s3_is_optimal_and_feasible(case1_s3):
    rep = case1_s3
    assert rep.status == OPTIMAL and rep.converged and rep.feasible
    assert rep.diagnostics["bb_certified"]
    assert rep.j_exact == pytest.approx(scenario_j(two_bus(CASE1), rep.injections), rel=1e-9)
    assert rep.j_exact < scenario_j(two_bus(CASE1), {2: [0, 0, 0, 0]})


def test_report_rows_are_consistent(case1_s3):
    rep = case1_s3
    assert [b["bus"] for b in rep.buses] == [1, 2]
    ibr = rep.ibrs[0]
    assert max(ibr["i_a"], ibr["i_b"], ibr["i_c"]) <= 1.0 + 1e-6
    assert ibr["s_utilization"] == pytest.approx(ibr["s"] / 1.2)
    assert ibr["p"] >= 0.2 - 1e-3 and ibr["q"] >= -0.6 - 1e-3
    for row in rep.buses:
        assert row["vuf"] == pytest.approx(row["v_minus"] / row["v_plus"])


def test_report_round_trip(case1_s3):
    text = json.dumps(case1_s3.to_dict())
    again = SolveReport.from_dict(json.loads(text))
    assert again == case1_s3
    np.testing.assert_array_equal(again.injection_set().currents, case1_s3.injection_set().currents)


def test_refinement_is_no_worse_than_first_stage(case1_s3):
    first = [t for t in case1_s3.trace if t["stage"] == "relaxed"]
    assert case1_s3.diagnostics["refine_iterations"] >= 1
    assert case1_s3.j_strategy <= first[-1]["exact_objective"] + 1e-12


def test_refine_skipped_without_positive_weight():
    rep = run_strategy(two_bus(CASE1), Strategy.S2)
    assert rep.diagnostics["refine_iterations"] == 0
    assert rep.diagnostics["refine_converged"] is None


def test_balanced_network_needs_no_negative_sequence():
    sc = Scenario(
        m=2,
        lines=two_bus().lines,
        loads={},
        ibrs=(dataclasses.replace(two_bus().ibrs[0], p_min=-0.1, q_min=-0.1),),
        v0_plus=Phasor(0.9),
        v0_minus=Phasor(0.0),
    )
    for strategy in Strategy:
        rep = run_strategy(sc, strategy)
        assert rep.status == OPTIMAL
        assert np.hypot(*rep.injections[2][2:]) <= 1e-5
        assert rep.buses[1]["v_minus"] <= 1e-5


def test_tiny_ratings_reproduce_zero_injection():
    base = two_bus(CASE1, p_min=-math.inf, q_min=-math.inf)
    tiny = dataclasses.replace(base, ibrs=(dataclasses.replace(base.ibrs[0], i_max=1e-6, s_max=1e-6),))
    rep = run_strategy(tiny, Strategy.S3)
    assert rep.j_exact == pytest.approx(scenario_j(base, {2: [0, 0, 0, 0]}), abs=1e-5)


def test_larger_rating_never_hurts():
    base = two_bus(CASE1, p_min=-math.inf, q_min=-math.inf)
    values = []
    for i_max in (0.2, 0.5, 1.0):
        sc = dataclasses.replace(base, ibrs=(dataclasses.replace(base.ibrs[0], i_max=i_max, s_max=1.2 * i_max),))
        values.append(run_strategy(sc, Strategy.S3).j_exact)
    assert values[0] >= values[1] - 1e-4 >= values[2] - 2e-4


def test_outputs_pass_exact_verification():
    sc = experiment_feeder()
    for strategy in Strategy:
        rep = run_strategy(sc, strategy)
        assert rep.feasible
        assert verify_solution(sc, rep.injection_set()).feasible


def test_coordinated_strategy_dominates(case1_s3):
    sc = two_bus(CASE1)
    others = [run_strategy(sc, s).j_exact for s in (Strategy.S1, Strategy.S2)]
    assert case1_s3.j_exact <= min(others) + 1e-4


@pytest.mark.parametrize("linearization", ["taylor", "frozen"])
def test_linearization_options_both_settle(linearization):
    rep = run_strategy(two_bus(CASE2), Strategy.S3, RunSettings(linearization=linearization))
    assert rep.status == OPTIMAL and rep.feasible
    assert rep.diagnostics["settings"]["linearization"] == linearization


def test_single_pass_limit_reports_non_convergence():
    rep = run_strategy(chain_feeder(6, (3, 6), CASE1), Strategy.S3, RunSettings(max_sc_iters=1))
    assert rep.status == NON_CONVERGED
    assert not rep.converged
    assert rep.diagnostics["sc_iterations"] == 1


def test_infeasible_floors_report():
    rep = run_strategy(two_bus(CASE1, p_min=1.15, q_min=0.5), Strategy.S3)
    assert rep.status == INFEASIBLE
    assert not rep.converged


def test_overrides_are_applied():
    rep = run_strategy(two_bus(CASE1), Strategy.S2, RunSettings(polygon_sides=12, big_m=1.5))
    assert rep.diagnostics["settings"]["polygon_sides"] == 12
    assert rep.diagnostics["settings"]["big_m"] == 1.5


def test_compare_scores_common_objective():
    sc = two_bus(CASE2)
    cmp = compare_strategies(sc)
    assert set(cmp.reports) == {"s1", "s2", "s3"}
    assert not cmp.errors
    for name, rep in cmp.reports.items():
        assert cmp.j_exact[name] == pytest.approx(scenario_j(sc, rep.injections, lam=1.0), rel=1e-9)
    assert cmp.j_exact["s3"] <= min(cmp.j_exact["s1"], cmp.j_exact["s2"]) + 1e-4
    assert {(r["strategy"], r["bus"]) for r in cmp.scatter} == {(s, 2) for s in ("s1", "s2", "s3")}
    json.dumps(cmp.to_dict())


def test_shared_model_gives_same_answer():
    sc = two_bus(CASE2)
    a = run_strategy(sc, Strategy.S3)
    b = run_strategy(sc, Strategy.S3, model=build_model(sc))
    assert a.injections == b.injections
