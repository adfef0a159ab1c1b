"""Branch-and-bound over one-hot polygon-side groups.

Continuous relaxations are second-order cone QPs handed to Clarabel.  The
tree search, node bounds, branching rule and incumbent handling live here.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

from .problem import MiConvexProblem
from .seqflow import FlowResult

__all__ = [
    "SolverSettings",
    "SubproblemResult",
    "SolveOutcome",
    "solve_convex_subproblem",
    "warm_start",
    "assignment_bounds",
    "branch_and_bound",
    "solve_by_enumeration",
]

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NODE_LIMIT = "node_limit"
FAILURE = "subproblem_failure"

_INT_TOL = 1e-6


@dataclass(frozen=True)
class SolverSettings:
    kkt_tolerance: float = 1e-7
    absolute_gap: float = 1e-6
    max_nodes: int = 10000
    heuristic_only: bool = False
    seed: int = 0  # recorded in reports; the search itself is deterministic
    use_dominance: bool = True

    def __post_init__(self):
        if not (self.kkt_tolerance > 0 and self.absolute_gap > 0):
            raise ValueError("tolerances must be positive")
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")


@dataclass
class SubproblemResult:
    status: str
    x: np.ndarray | None = None
    objective: float = math.inf
    bound: float = math.inf
    residual: float = math.inf
    certificate: np.ndarray | None = None
    iterations: int = 0
    message: str = ""


@dataclass
class SolveOutcome:
    status: str
    x: np.ndarray | None
    objective: float
    bound: float
    nodes: int
    elapsed: float
    assignment: tuple[int, ...] | None = None
    subproblems: int = 0
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    # False when the bound only covers a fixed assignment (heuristic mode)
    certified: bool = True

    @property
    def gap(self) -> float:
        if self.x is None:
            return math.inf
        return max(self.objective - self.bound, 0.0)


def _cone_data(problem: MiConvexProblem, lb: np.ndarray, ub: np.ndarray):
    """Clarabel ``A x + s = b`` blocks: zero cone, nonnegative cone, SOCs."""
    n = problem.n_vars
    fixed = np.flatnonzero(np.isfinite(lb) & (lb == ub))
    lower = np.flatnonzero(np.isfinite(lb) & (lb != ub))
    upper = np.flatnonzero(np.isfinite(ub) & (lb != ub))

    eye = sp.identity(n, format="csr")
    a_zero = sp.vstack([problem.a_eq, eye[fixed]])
    b_zero = np.concatenate([problem.b_eq, lb[fixed]])
    a_nn = sp.vstack([problem.a_ub, -eye[lower], eye[upper]])
    b_nn = np.concatenate([problem.b_ub, -lb[lower], ub[upper]])

    blocks_a = [a_zero, a_nn]
    blocks_b = [b_zero, b_nn]
    cones = []
    if a_zero.shape[0]:
        cones.append(clarabel.ZeroConeT(a_zero.shape[0]))
    if a_nn.shape[0]:
        cones.append(clarabel.NonnegativeConeT(a_nn.shape[0]))
    for c in problem.soc:
        # s = (c'x + d, A x + b) in SOC  ->  rows [-c; -A], rhs [d; b]
        blocks_a.append(sp.vstack([-c.c, -c.a]))
        blocks_b.append(np.concatenate([[c.d], c.b]))
        cones.append(clarabel.SecondOrderConeT(1 + c.a.shape[0]))
    a = sp.vstack(blocks_a).tocsc()
    b = np.concatenate(blocks_b)
    return a, b, cones


def solve_convex_subproblem(
    problem: MiConvexProblem,
    lb: np.ndarray | None = None,
    ub: np.ndarray | None = None,
    settings: SolverSettings = SolverSettings(),
) -> SubproblemResult:
    """Solve the continuous relaxation with the given variable bounds.

    Binaries are treated as continuous inside ``[lb, ub]``; pass equal
    bounds to fix them.  ``bound`` is a valid lower bound (dual objective)
    whenever the status is optimal.
    """
    lb = problem.lb if lb is None else lb
    ub = problem.ub if ub is None else ub
    if np.any(lb > ub + 1e-12):
        return SubproblemResult(INFEASIBLE, message="crossed bounds")
    a, b, cones = _cone_data(problem, lb, ub)
    p = sp.triu(problem.p).tocsc()

    opts = clarabel.DefaultSettings()
    opts.verbose = False
    tol = settings.kkt_tolerance * 0.01
    opts.tol_feas = tol
    opts.tol_gap_abs = tol
    opts.tol_gap_rel = tol
    opts.max_iter = 200
    try:
        sol = clarabel.DefaultSolver(p, problem.q, a, b, cones, opts).solve()
    except Exception as exc:  # clarabel raises plain exceptions on bad data
        return SubproblemResult(FAILURE, message=str(exc))

    status = str(sol.status)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SubproblemResult(INFEASIBLE, certificate=np.array(sol.z), iterations=sol.iterations, message=status)
    if status not in ("Solved", "AlmostSolved"):
        return SubproblemResult(FAILURE, iterations=sol.iterations, message=status)

    x = np.array(sol.x)
    dual = float(sol.obj_val_dual) + problem.const
    viol = problem.max_violation(x)
    residual = max(viol["eq"], viol["ub"], viol["bounds"], viol["soc"])
    if residual > settings.kkt_tolerance:
        # one retry after snapping bounds (interior-point iterates can sit a hair outside)
        x = np.clip(x, lb, ub)
        viol = problem.max_violation(x)
        residual = max(viol["eq"], viol["ub"], viol["bounds"], viol["soc"])
    primal = problem.objective(x)
    result = SubproblemResult(
        OPTIMAL,
        x=x,
        objective=primal,
        bound=min(primal, dual),
        residual=residual,
        iterations=sol.iterations,
        message=status,
    )
    if residual > 10 * settings.kkt_tolerance:
        result.status = FAILURE
        result.message = f"{status}; primal residual {residual:.2e}"
    return result


def _estimate_dq(v_hat, bus: int) -> tuple[float, float]:
    if isinstance(v_hat, FlowResult):
        v = v_hat.v_plus[bus - 1]
        return v.real, v.imag
    vd, vq = v_hat[bus][:2]
    return float(vd), float(vq)


def warm_start(problem: MiConvexProblem, v_hat: FlowResult | Mapping[int, Sequence[float]]) -> tuple[int, ...]:
    """Pick, per regulated bus, the side whose normal is nearest the estimated V+ angle."""
    choice = []
    for bus, group in zip(problem.group_buses, problem.groups):
        n = len(group)
        vd, vq = _estimate_dq(v_hat, bus)
        if math.hypot(vd, vq) == 0.0:
            choice.append(0)
            continue
        ang = math.atan2(vq, vd)
        theta = 2.0 * math.pi * np.arange(n) / n
        dist = np.abs(np.angle(np.exp(1j * (theta - ang))))
        choice.append(int(np.argmin(dist)))
    return tuple(choice)


def assignment_bounds(problem: MiConvexProblem, assignment: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    lb = problem.lb.copy()
    ub = problem.ub.copy()
    for group, k in zip(problem.groups, assignment):
        lb[group] = 0.0
        ub[group] = 0.0
        lb[group[k]] = ub[group[k]] = 1.0
    return lb, ub


@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)


def _assignment_of(problem: MiConvexProblem, x: np.ndarray) -> tuple[int, ...] | None:
    out = []
    for group in problem.groups:
        vals = x[group]
        k = int(np.argmax(vals))
        if vals[k] < 1.0 - _INT_TOL or np.any(np.delete(vals, k) > _INT_TOL):
            return None
        out.append(k)
    return tuple(out)


def branch_and_bound(
    problem: MiConvexProblem,
    settings: SolverSettings = SolverSettings(),
    warm: Sequence[int] | None = None,
) -> SolveOutcome:
    """Best-first branch-and-bound with node-id tie breaking.

    Branching picks, over all one-hot groups, the member whose relaxed value
    is closest to 1/2 and splits on ``x = 1`` versus ``x = 0``.  With
    ``settings.use_dominance`` the root drops polygon sides that cannot be
    the nearest normal for any reachable voltage.
    """
    start = time.perf_counter()
    solved: dict[tuple[int, ...], SubproblemResult] = {}
    counter = itertools.count()
    n_sub = 0

    def solve_fixed(assignment):
        nonlocal n_sub
        key = tuple(assignment)
        if key not in solved:
            n_sub += 1
            solved[key] = solve_convex_subproblem(problem, *assignment_bounds(problem, key), settings)
        return solved[key]

    if not problem.groups:
        res = solve_convex_subproblem(problem, settings=settings)
        return SolveOutcome(res.status, res.x, res.objective, res.bound, 1, time.perf_counter() - start, (), 1)

    if settings.heuristic_only:
        if warm is None:
            warm = tuple(int(c[0]) if len(c) else 0 for c in problem.candidates) or (0,) * len(problem.groups)
        res = solve_fixed(warm)
        return SolveOutcome(
            res.status, res.x, res.objective, res.bound, 1, time.perf_counter() - start,
            tuple(warm), n_sub, certified=False,
        )

    inc_x, inc_obj, inc_assign = None, math.inf, None
    if warm is not None:
        res = solve_fixed(warm)
        if res.status == OPTIMAL:
            inc_x, inc_obj, inc_assign = res.x, res.objective, tuple(warm)

    root_lb, root_ub = problem.lb.copy(), problem.ub.copy()
    if settings.use_dominance and problem.candidates:
        for group, cand in zip(problem.groups, problem.candidates):
            mask = np.ones(len(group), dtype=bool)
            mask[cand] = False
            root_ub[group[mask]] = 0.0

    heap = [_Node(-math.inf, next(counter), root_lb, root_ub)]
    global_lb = -math.inf
    nodes = 0
    trace: list[tuple[int, float, float]] = []
    failure = None

    while heap:
        node = heapq.heappop(heap)
        global_lb = max(global_lb, min(node.bound, inc_obj))
        if node.bound >= inc_obj - settings.absolute_gap:
            heap.clear()
            break
        if nodes >= settings.max_nodes:
            heapq.heappush(heap, node)
            break
        nodes += 1
        n_sub += 1
        res = solve_convex_subproblem(problem, node.lb, node.ub, settings)
        if res.status == INFEASIBLE:
            trace.append((node.node_id, inc_obj, global_lb))
            continue
        if res.status != OPTIMAL:
            failure = res
            log.warning("node %d: subproblem failure (%s)", node.node_id, res.message)
            trace.append((node.node_id, inc_obj, global_lb))
            continue
        bound = max(res.bound, node.bound)
        if bound >= inc_obj - settings.absolute_gap:
            trace.append((node.node_id, inc_obj, global_lb))
            continue

        assignment = _assignment_of(problem, res.x)
        if assignment is not None:
            fixed = solve_fixed(assignment)
            if fixed.status == OPTIMAL and fixed.objective < inc_obj:
                inc_x, inc_obj, inc_assign = fixed.x, fixed.objective, assignment
            free = any(np.any(node.ub[g] != node.lb[g]) for g in problem.groups)
            if fixed.status == OPTIMAL and (not free or fixed.objective <= bound + settings.absolute_gap):
                trace.append((node.node_id, inc_obj, global_lb))
                continue

        # most fractional free member across all groups
        best = None
        for group in problem.groups:
            for col in group:
                if node.lb[col] == node.ub[col]:
                    continue
                score = abs(res.x[col] - 0.5)
                if best is None or score < best[0]:
                    best = (score, col, group)
        if best is None:
            trace.append((node.node_id, inc_obj, global_lb))
            continue
        _, col, group = best
        one_lb, one_ub = node.lb.copy(), node.ub.copy()
        one_ub[group] = 0.0
        one_lb[group] = 0.0
        one_lb[col] = one_ub[col] = 1.0
        zero_lb, zero_ub = node.lb.copy(), node.ub.copy()
        zero_ub[col] = 0.0
        for lo, hi in ((one_lb, one_ub), (zero_lb, zero_ub)):
            g_free = hi[group] > 0
            if not g_free.any():
                continue  # every side of this group excluded
            if g_free.sum() == 1:
                lo[group[g_free]] = 1.0
            heapq.heappush(heap, _Node(bound, next(counter), lo, hi, node.depth + 1))
        trace.append((node.node_id, inc_obj, global_lb))

    if heap:
        final_lb = min(heap[0].bound, inc_obj)
        status = NODE_LIMIT
    else:
        final_lb = inc_obj
        status = OPTIMAL
    final_lb = max(final_lb, global_lb) if heap else final_lb
    if inc_x is None:
        status = FAILURE if failure is not None else (NODE_LIMIT if heap else INFEASIBLE)
    elif failure is not None and status == OPTIMAL:
        # a pruned-by-failure node may have hidden a better point
        log.warning("branch-and-bound finished with %s; optimality not certified", failure.message)
    return SolveOutcome(
        status,
        inc_x,
        inc_obj,
        final_lb if inc_x is not None else -math.inf,
        nodes,
        time.perf_counter() - start,
        inc_assign,
        n_sub,
        trace,
        certified=failure is None,
    )


def solve_by_enumeration(problem: MiConvexProblem, settings: SolverSettings = SolverSettings()) -> SolveOutcome:
    """Solve every one-hot assignment and keep the best.  Exponential; for checking only."""
    start = time.perf_counter()
    best = SolveOutcome(INFEASIBLE, None, math.inf, math.inf, 0, 0.0)
    count = 0
    for assignment in itertools.product(*(range(len(g)) for g in problem.groups)):
        count += 1
        res = solve_convex_subproblem(problem, *assignment_bounds(problem, assignment), settings)
        if res.status == OPTIMAL and res.objective < best.objective:
            best = SolveOutcome(OPTIMAL, res.x, res.objective, res.objective, 0, 0.0, tuple(assignment))
    best.nodes = best.subproblems = count
    best.elapsed = time.perf_counter() - start
    return best
