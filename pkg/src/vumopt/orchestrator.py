"""End-to-end solves: successive convexification, strategy variants, comparison.

P and Q are bilinear in voltage and current.  Each pass linearizes them
around the previous exact power-flow result (first-order expansion by
default, or with the voltages simply frozen), solves the mixed-integer
program, then re-runs the exact flow on the new currents.  Passes stop when
the estimated voltages move less than ``sc_tolerance``.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from .model import Scenario, SequenceNetworkModel, build_model
from .problem import CUR, MiConvexProblem, ObjectiveConfig, PolygonConfig, build_problem
from .seqflow import (
    FlowResult,
    InjectionSet,
    Tolerances,
    VerificationReport,
    solve_sequence_flow,
    verify_solution,
)
from .solver import (
    FAILURE,
    INFEASIBLE,
    OPTIMAL,
    SolveOutcome,
    SolverSettings,
    branch_and_bound,
    warm_start,
)

__all__ = [
    "Strategy",
    "RunSettings",
    "ScIterate",
    "SolveReport",
    "ComparisonReport",
    "objective_config",
    "exact_objective",
    "run_strategy",
    "compare_strategies",
]

log = logging.getLogger(__name__)

NON_CONVERGED = "non_converged"


class Strategy(enum.Enum):
    S1 = "s1"  # positive-sequence support only
    S2 = "s2"  # negative-sequence attenuation only
    S3 = "s3"  # coordinated

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        return cls(text.lower())


@dataclass(frozen=True)
class RunSettings:
    solver: SolverSettings = SolverSettings()
    lam: float = 1.0
    max_sc_iters: int = 20
    sc_tolerance: float = 1e-4
    tolerances: Tolerances = Tolerances()
    # tie-break weight on current effort; makes degenerate optima unique so
    # the frozen voltages settle, and leaves unneeded headroom idle
    effort: float = 1e-6
    polygon_sides: int | None = None
    big_m: float | None = None
    # "taylor" expands V conj(I) around the previous pass; "frozen" holds V fixed
    linearization: str = "taylor"
    # second stage that trades the polygon relaxation of V+ for a majorizer
    refine: bool = True

    def __post_init__(self):
        if self.linearization not in ("taylor", "frozen"):
            raise ValueError(f"linearization must be 'taylor' or 'frozen', got {self.linearization!r}")


def objective_config(strategy: Strategy, scenario: Scenario, settings: RunSettings) -> ObjectiveConfig:
    regulated = scenario.regulated_set
    if strategy is Strategy.S1:
        return ObjectiveConfig(lam=1.0, alpha=0.0, regulated=regulated, effort=settings.effort)
    if strategy is Strategy.S2:
        return ObjectiveConfig(lam=0.0, alpha=1.0, regulated=regulated, effort=settings.effort)
    return ObjectiveConfig(lam=settings.lam, alpha=1.0, regulated=regulated, effort=settings.effort)


def exact_objective(scenario: Scenario, flow: FlowResult, lam: float = 1.0, alpha: float = 1.0) -> float:
    v = scenario.v_ph_pk
    idx = np.array(scenario.regulated_set, dtype=int) - 1
    vp = flow.mag_plus[idx] / v
    vn = flow.mag_minus[idx] / v
    return float(np.sum(alpha * vn**2 + lam * (vp - 1.0) ** 2))


@dataclass
class ScIterate:
    index: int
    max_dv: float
    model_objective: float
    exact_objective: float
    feasible: bool
    current_margin: float
    power_margin: float
    bb_status: str
    nodes: int
    stage: str = "relaxed"


@dataclass
class SolveReport:
    scenario_name: str
    scenario_digest: str
    strategy: str
    status: str
    converged: bool
    j_exact: float
    j_strategy: float
    j_model: float
    lam: float
    regulated: list[int]
    injections: dict[int, list[float]]
    buses: list[dict[str, float]]
    ibrs: list[dict[str, float]]
    verification: list[dict[str, Any]]
    feasible: bool
    relaxation: list[dict[str, float]]
    diagnostics: dict[str, Any]
    trace: list[dict[str, Any]]

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["injections"] = {str(k): v for k, v in self.injections.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SolveReport":
        d = dict(d)
        d["injections"] = {int(k): list(v) for k, v in d["injections"].items()}
        return cls(**d)

    def injection_set(self) -> InjectionSet:
        return InjectionSet.from_dict(self.injections)


def _injections(problem: MiConvexProblem, scenario: Scenario, x: np.ndarray) -> InjectionSet:
    rows = [[x[problem.index.current(s, c)] for c in CUR] for s in scenario.ibr_buses]
    return InjectionSet(scenario.ibr_buses, np.array(rows).reshape(len(rows), 4))


def _polish_magnitudes(problem: MiConvexProblem, scenario: Scenario, x: np.ndarray) -> np.ndarray:
    """Snap magnitude variables down onto the exact norm where that is free.

    A magnitude column qualifies when it only enters inequality rows with a
    non-negative coefficient and the objective does not increase as it
    falls.  Lowering it to the norm then stays feasible and cannot raise the
    objective; it removes interior-point slack near the cone tip.
    """
    x = x.copy()
    p = sp.csc_matrix(problem.p)
    a_eq = sp.csc_matrix(problem.a_eq)
    a_ub = sp.csc_matrix(problem.a_ub)
    for i in range(1, scenario.m + 1):
        for seq in "+-":
            col = problem.index.magnitude(i, seq)
            p_col = p.getcol(col).toarray().ravel()
            off_diag = np.delete(p_col, col)
            if np.any(off_diag != 0.0) or p_col[col] < 0.0 or a_eq.getcol(col).nnz:
                continue
            if np.any(a_ub.getcol(col).data < 0.0):
                continue
            vd = x[problem.index.voltage(i, f"Vd{seq}")]
            vq = x[problem.index.voltage(i, f"Vq{seq}")]
            target = min(max(math.hypot(vd, vq), problem.lb[col]), x[col])
            # convex in this column, so a non-negative slope at the target covers the whole drop
            if p_col[col] * target + problem.q[col] >= 0.0:
                x[col] = target
    return x


def _max_dv(a: FlowResult, b: FlowResult, buses) -> float:
    idx = np.array(buses, dtype=int) - 1
    if idx.size == 0:
        return 0.0
    return float(max(np.abs(a.v_plus[idx] - b.v_plus[idx]).max(), np.abs(a.v_minus[idx] - b.v_minus[idx]).max()))


def _apply_overrides(scenario: Scenario, settings: RunSettings) -> Scenario:
    changes = {}
    if settings.polygon_sides is not None:
        changes["polygon_sides"] = settings.polygon_sides
    if settings.big_m is not None:
        changes["big_m"] = settings.big_m
    return dataclasses.replace(scenario, **changes) if changes else scenario


def _build_report(
    scenario: Scenario,
    strategy: Strategy,
    settings: RunSettings,
    status: str,
    converged: bool,
    inj: InjectionSet,
    verification: VerificationReport,
    model_objective: float,
    relaxed: dict[str, dict[int, float]],
    diagnostics: dict[str, Any],
    trace: list[ScIterate],
) -> SolveReport:
    flow = verification.flow
    cfg = objective_config(strategy, scenario, settings)
    buses = []
    for i in range(1, scenario.m + 1):
        buses.append(
            {
                "bus": i,
                "v_plus": float(flow.mag_plus[i - 1]),
                "v_minus": float(flow.mag_minus[i - 1]),
                "vuf": float(flow.vuf[i - 1]),
                "angle_plus_deg": math.degrees(float(np.angle(flow.v_plus[i - 1]))),
                "angle_minus_deg": math.degrees(float(np.angle(flow.v_minus[i - 1]))),
            }
        )
    ibrs = []
    for spec in scenario.ibrs:
        s = spec.bus
        idp, iqp, idn, iqn = (float(v) for v in inj[s])
        ia, ib, ic = verification.phase_currents[s]
        p, q, sa = verification.power[s]
        ibrs.append(
            {
                "bus": s,
                "id_plus": idp,
                "iq_plus": iqp,
                "id_minus": idn,
                "iq_minus": iqn,
                "i_a": ia,
                "i_b": ib,
                "i_c": ic,
                "p": p,
                "q": q,
                "s": sa,
                "s_utilization": sa / spec.s_max,
                "i_utilization": max(ia, ib, ic) / spec.i_max,
            }
        )
    relaxation = []
    for i in sorted(relaxed.get("+", {})):
        relaxation.append(
            {
                "bus": i,
                "v_plus_relaxed": relaxed["+"][i],
                "v_plus_exact": float(flow.mag_plus[i - 1]),
                "v_minus_relaxed": relaxed["-"][i],
                "v_minus_exact": float(flow.mag_minus[i - 1]),
            }
        )
    checks = verification.checks + verification.relaxation_gaps
    j_strategy = exact_objective(scenario, flow, lam=cfg.lam, alpha=cfg.alpha)
    if math.isfinite(model_objective):
        idx = np.array(scenario.regulated_set, dtype=int) - 1
        shrink = math.cos(math.pi / scenario.polygon_sides)
        bound = cfg.lam * (1.0 / shrink**2 - 1.0) * float(np.sum((flow.mag_plus[idx] / scenario.v_ph_pk) ** 2))
        diagnostics = dict(diagnostics, j_relaxation_gap=abs(j_strategy - model_objective), j_relaxation_bound=bound)
        log.info("model J %.6g, exact J %.6g, relaxation bound %.3g", model_objective, j_strategy, bound)
    return SolveReport(
        scenario_name=scenario.name,
        scenario_digest=scenario.digest(),
        strategy=strategy.value,
        status=status,
        converged=converged,
        j_exact=exact_objective(scenario, flow, lam=settings.lam),
        j_strategy=j_strategy,
        j_model=model_objective,
        lam=settings.lam,
        regulated=list(scenario.regulated_set),
        injections={b: [float(v) for v in row] for b, row in inj.as_dict().items()},
        buses=buses,
        ibrs=ibrs,
        verification=[dataclasses.asdict(c) for c in checks],
        feasible=verification.feasible,
        relaxation=relaxation,
        diagnostics=diagnostics,
        trace=[dataclasses.asdict(t) for t in trace],
    )


def _solve_pass(scenario, model, settings, cfg, polygon, v_hat, i_hat, anchor):
    """One convex pass: build, branch and bound, exact re-verification."""
    problem = build_problem(scenario, model, v_hat, cfg, polygon, i_hat=i_hat, anchor=anchor)
    bb = branch_and_bound(problem, settings.solver, warm=warm_start(problem, v_hat))
    if bb.x is None:
        return bb, None
    x = _polish_magnitudes(problem, scenario, bb.x)
    inj = _injections(problem, scenario, x)
    relaxed = {seq: {i: float(x[problem.index.magnitude(i, seq)]) for i in scenario.regulated_set} for seq in "+-"}
    verification = verify_solution(
        scenario, inj, model, settings.tolerances, relaxed_v_plus=relaxed["+"], relaxed_v_minus=relaxed["-"]
    )
    return bb, (inj, verification, bb.objective, relaxed)


def run_strategy(
    scenario: Scenario,
    strategy: Strategy = Strategy.S3,
    settings: RunSettings = RunSettings(),
    model: SequenceNetworkModel | None = None,
) -> SolveReport:
    """Successive convexification for one strategy, then exact verification.

    The first stage iterates the mixed-integer program with the polygon
    relaxation of ``V+`` until the voltage estimate settles.  When
    ``settings.refine`` is on and the strategy weights ``V+``, a second stage
    re-solves with the majorized objective anchored at the latest exact
    voltages, which removes the polygon gap from the reported optimum.  The
    returned iterate is the one with the lowest exact strategy objective
    among the settled first-stage iterate and the feasible refinement ones.
    """
    start = time.perf_counter()
    scenario = _apply_overrides(scenario, settings)
    model = model or build_model(scenario)
    polygon = PolygonConfig(scenario.polygon_sides, scenario.big_m)
    cfg = objective_config(strategy, scenario, settings)
    taylor = settings.linearization == "taylor"

    zero = InjectionSet.zeros(scenario)
    v_hat = solve_sequence_flow(model, scenario.v0_plus, scenario.v0_minus, zero)
    i_hat = zero.as_dict() if taylor else None

    trace: list[ScIterate] = []
    best = None  # (exact J, iterate payload) over verified-feasible iterates
    last = None
    converged = False
    refine_converged = None
    total_nodes = 0
    bb: SolveOutcome | None = None

    def record(stage, it, bb, payload, dv):
        inj, verification, model_obj, _ = payload
        j_strat = exact_objective(scenario, verification.flow, lam=cfg.lam, alpha=cfg.alpha)
        trace.append(
            ScIterate(
                index=it,
                max_dv=dv,
                model_objective=model_obj,
                exact_objective=j_strat,
                feasible=verification.feasible,
                current_margin=verification.worst_margin("phase_current"),
                power_margin=verification.worst_margin("apparent_power"),
                bb_status=bb.status,
                nodes=bb.nodes,
                stage=stage,
            )
        )
        return j_strat

    for it in range(settings.max_sc_iters):
        bb, payload = _solve_pass(scenario, model, settings, cfg, polygon, v_hat, i_hat, None)
        total_nodes += bb.nodes
        if payload is None:
            log.info("%s pass %d: %s", strategy.value, it, bb.status)
            break
        flow = payload[1].flow
        dv = _max_dv(flow, v_hat, scenario.ibr_buses)
        j_strat = record("relaxed", it, bb, payload, dv)
        last = payload
        if payload[1].feasible and (best is None or j_strat < best[0]):
            best = (j_strat, payload)
        v_hat = flow
        if taylor:
            i_hat = payload[0].as_dict()
        if dv < settings.sc_tolerance:
            converged = True
            break
    status_bb = bb

    if converged:
        chosen = last
        chosen_j = trace[-1].exact_objective if last[1].feasible else math.inf
    else:
        chosen = best[1] if best is not None else last
        chosen_j = best[0] if best is not None else math.inf

    if settings.refine and cfg.lam > 0 and last is not None:
        refine_converged = False
        for it in range(settings.max_sc_iters):
            anchor = {i: complex(v_hat.v_plus[i - 1]) for i in scenario.regulated_set}
            rbb, payload = _solve_pass(scenario, model, settings, cfg, polygon, v_hat, i_hat, anchor)
            total_nodes += rbb.nodes
            if payload is None:
                log.info("%s refinement pass %d: %s", strategy.value, it, rbb.status)
                break
            flow = payload[1].flow
            dv = _max_dv(flow, v_hat, scenario.ibr_buses)
            j_strat = record("refine", it, rbb, payload, dv)
            if payload[1].feasible and j_strat < chosen_j:
                chosen, chosen_j = payload, j_strat
            v_hat = flow
            if taylor:
                i_hat = payload[0].as_dict()
            if dv < settings.sc_tolerance:
                refine_converged = True
                break

    diagnostics = {
        "bb_status": status_bb.status if status_bb else FAILURE,
        "bb_nodes_total": total_nodes,
        "bb_gap_last": status_bb.gap if status_bb and status_bb.x is not None else None,
        "bb_certified": status_bb.certified if status_bb else False,
        "sc_iterations": sum(1 for t in trace if t.stage == "relaxed"),
        "refine_iterations": sum(1 for t in trace if t.stage == "refine"),
        "refine_converged": refine_converged,
        "elapsed_s": time.perf_counter() - start,
        "settings": {
            "kkt_tolerance": settings.solver.kkt_tolerance,
            "absolute_gap": settings.solver.absolute_gap,
            "max_nodes": settings.solver.max_nodes,
            "heuristic_only": settings.solver.heuristic_only,
            "seed": settings.solver.seed,
            "max_sc_iters": settings.max_sc_iters,
            "sc_tolerance": settings.sc_tolerance,
            "polygon_sides": scenario.polygon_sides,
            "big_m": scenario.big_m,
            "linearization": settings.linearization,
            "refine": settings.refine,
        },
    }

    if last is None:
        status = status_bb.status if status_bb and status_bb.status in (INFEASIBLE, FAILURE) else FAILURE
        verification = verify_solution(scenario, zero, model, settings.tolerances)
        return _build_report(
            scenario, strategy, settings, status, False, zero, verification, math.nan, {}, diagnostics, trace
        )

    if converged:
        status = OPTIMAL if status_bb.status == OPTIMAL else status_bb.status
    else:
        status = NON_CONVERGED
    inj, verification, model_obj, relaxed = chosen
    return _build_report(
        scenario, strategy, settings, status, converged, inj, verification, model_obj, relaxed, diagnostics, trace
    )


@dataclass
class ComparisonReport:
    scenario_name: str
    lam: float
    reports: dict[str, SolveReport]
    j_exact: dict[str, float]
    scatter: list[dict[str, Any]]
    errors: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_name": self.scenario_name,
            "lam": self.lam,
            "j_exact": self.j_exact,
            "errors": self.errors,
            "scatter": self.scatter,
            "reports": {k: r.to_dict() for k, r in self.reports.items()},
        }


def compare_strategies(
    scenario: Scenario,
    settings: RunSettings = RunSettings(),
    strategies: tuple[Strategy, ...] = (Strategy.S1, Strategy.S2, Strategy.S3),
) -> ComparisonReport:
    """Run each strategy and score all of them with the common objective."""
    model = build_model(_apply_overrides(scenario, settings))
    reports: dict[str, SolveReport] = {}
    j: dict[str, float] = {}
    errors: dict[str, str] = {}
    scatter = []
    for strategy in strategies:
        try:
            rep = run_strategy(scenario, strategy, settings, model=model)
        except Exception as exc:  # keep comparing the others
            log.exception("strategy %s failed", strategy.value)
            errors[strategy.value] = repr(exc)
            continue
        reports[strategy.value] = rep
        if rep.status in (INFEASIBLE, FAILURE):
            errors[strategy.value] = rep.status
        j[strategy.value] = rep.j_exact
        for row in rep.buses:
            if row["bus"] in rep.regulated:
                scatter.append(
                    {"strategy": strategy.value, "bus": row["bus"], "v_plus": row["v_plus"], "v_minus": row["v_minus"]}
                )
    return ComparisonReport(scenario.name, settings.lam, reports, j, scatter, errors)
