"""Coordinated positive/negative-sequence current references for IBRs.

The package models a radial feeder in symmetrical components, evaluates
sequence voltages for given inverter current injections, and chooses those
injections with a mixed-integer second-order cone program so that the
negative-sequence voltage is attenuated while the positive-sequence voltage
is held near rated, within each inverter's phase-current and power limits.
"""
from .model import (
    IbrSpec,
    Line,
    ModelError,
    Phasor,
    Scenario,
    ScenarioError,
    SequenceNetworkModel,
    TopologyError,
    build_model,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from .orchestrator import (
    ComparisonReport,
    RunSettings,
    SolveReport,
    Strategy,
    compare_strategies,
    exact_objective,
    run_strategy,
)
from .problem import ObjectiveConfig, PolygonConfig, build_problem
from .seqflow import (
    FlowResult,
    InjectionSet,
    Tolerances,
    VerificationReport,
    phase_current_magnitudes,
    solve_sequence_flow,
    verify_solution,
)
from .solver import SolverSettings, branch_and_bound, solve_by_enumeration

__version__ = "0.1.0"

__all__ = [
    "IbrSpec",
    "Line",
    "ModelError",
    "Phasor",
    "Scenario",
    "ScenarioError",
    "SequenceNetworkModel",
    "TopologyError",
    "build_model",
    "load_scenario",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "ComparisonReport",
    "RunSettings",
    "SolveReport",
    "Strategy",
    "compare_strategies",
    "exact_objective",
    "run_strategy",
    "ObjectiveConfig",
    "PolygonConfig",
    "build_problem",
    "FlowResult",
    "InjectionSet",
    "Tolerances",
    "VerificationReport",
    "phase_current_magnitudes",
    "solve_sequence_flow",
    "verify_solution",
    "SolverSettings",
    "branch_and_bound",
    "solve_by_enumeration",
]
