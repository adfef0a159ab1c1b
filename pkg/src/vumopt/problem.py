"""Standard-form mixed-integer SOC program for coordinated unbalance mitigation.

Decision variables (all per-unit):

* per IBR ``s``: ``Id+ Iq+ Id- Iq-`` and the powers ``P Q``
* per bus ``i``: ``Vd+ Vq+ Vd- Vq-`` and the magnitude variables ``V+ V-``
* per regulated bus ``i`` and polygon side ``k``: binary ``x[i,k]``

The container is solver-agnostic::

    minimize    1/2 x'Px + q'x + const
    subject to  A_eq x = b_eq,  A_ub x <= b_ub,  lb <= x <= ub
                ||A_j x + b_j|| <= c_j'x + d_j     for every cone j
                sum(x[g]) = 1                      for every one-hot group g
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .model import Scenario, SequenceNetworkModel
from .seqflow import FlowResult

__all__ = [
    "ConfigurationError",
    "PolygonConfig",
    "ObjectiveConfig",
    "VariableIndex",
    "SocConstraint",
    "MiConvexProblem",
    "ProblemBuilder",
    "build_problem",
    "voltage_bound_discs",
    "candidate_sides",
]

CUR = ("Id+", "Iq+", "Id-", "Iq-")
VDQ = ("Vd+", "Vq+", "Vd-", "Vq-")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PolygonConfig:
    n: int = 8
    big_m: float = 1.0

    def __post_init__(self):
        if self.n < 3:
            raise ConfigurationError(f"polygon needs at least 3 sides, got {self.n}")
        if not self.big_m > 0:
            raise ConfigurationError("big_m must be positive")

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.n) / self.n

    @property
    def shrink(self) -> float:
        return math.cos(math.pi / self.n)

    @property
    def effective_big_m(self) -> float:
        # V+cos(pi/n) - proj_k <= big_m*cos(pi/n) + |Vdq| <= big_m*(1 + cos(pi/n))
        return self.big_m * (1.0 + self.shrink)


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights of the sequence-voltage objective.

    ``alpha`` scales the negative-sequence term, ``lam`` the positive-sequence
    deviation term.  ``effort`` adds ``effort * sum(|I|^2 / Imax^2)``, a small
    tie-break that picks the least current among otherwise equal optima.
    """

    lam: float = 1.0
    alpha: float = 1.0
    regulated: tuple[int, ...] = ()
    effort: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.alpha < 0 or self.effort < 0:
            raise ConfigurationError("objective weights must be non-negative")
        if self.lam == 0 and self.alpha == 0:
            raise ConfigurationError("alpha and lambda cannot both be zero")


class VariableIndex:
    """Bidirectional map between variable names and column indices."""

    def __init__(self):
        self.names: list[str] = []
        self._cols: dict[str, int] = {}

    def add(self, name: str) -> int:
        if name in self._cols:
            raise KeyError(f"duplicate variable {name}")
        self._cols[name] = len(self.names)
        self.names.append(name)
        return self._cols[name]

    def __getitem__(self, name: str) -> int:
        return self._cols[name]

    def __contains__(self, name: str) -> bool:
        return name in self._cols

    def __len__(self) -> int:
        return len(self.names)

    def current(self, bus: int, comp: str) -> int:
        return self._cols[f"{comp}[{bus}]"]

    def voltage(self, bus: int, comp: str) -> int:
        return self._cols[f"{comp}[{bus}]"]

    def magnitude(self, bus: int, seq: str) -> int:
        return self._cols[f"V{seq}[{bus}]"]

    def power(self, bus: int, kind: str) -> int:
        return self._cols[f"{kind}[{bus}]"]

    def binary(self, bus: int, k: int) -> int:
        return self._cols[f"x[{bus},{k}]"]


@dataclass(frozen=True)
class SocConstraint:
    """``||a @ x + b|| <= c @ x + d``; ``a`` is sparse."""

    a: sp.csr_matrix
    b: np.ndarray
    c: sp.csr_matrix
    d: float
    label: str

    def residual(self, x: np.ndarray) -> float:
        """Positive when violated."""
        lhs = float(np.linalg.norm(self.a @ x + self.b))
        rhs = float((self.c @ x)[0] + self.d)
        return lhs - rhs


@dataclass
class MiConvexProblem:
    index: VariableIndex
    p: sp.csc_matrix
    q: np.ndarray
    const: float
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_ub: sp.csr_matrix
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    soc: list[SocConstraint]
    groups: list[np.ndarray]
    eq_labels: list[str] = field(default_factory=list)
    ub_labels: list[str] = field(default_factory=list)
    # per group: sides that can hold an optimum (see candidate_sides)
    candidates: list[np.ndarray] = field(default_factory=list)
    group_buses: list[int] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.index)

    @property
    def binaries(self) -> np.ndarray:
        return np.concatenate(self.groups) if self.groups else np.zeros(0, dtype=int)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.p @ x) + self.q @ x + self.const)

    def max_violation(self, x: np.ndarray) -> dict[str, float]:
        viol = {
            "eq": float(np.abs(self.a_eq @ x - self.b_eq).max(initial=0.0)),
            "ub": float(np.maximum(self.a_ub @ x - self.b_ub, 0).max(initial=0.0)),
            "bounds": float(np.maximum(np.maximum(self.lb - x, x - self.ub), 0).max(initial=0.0)),
            "soc": max((max(c.residual(x), 0.0) for c in self.soc), default=0.0),
        }
        bins = self.binaries
        if bins.size:
            viol["integrality"] = float(np.abs(x[bins] - np.round(x[bins])).max())
            viol["one_hot"] = max(abs(float(x[g].sum()) - 1.0) for g in self.groups)
        return viol

    def is_feasible(self, x: np.ndarray, tol: float = 1e-7) -> bool:
        return all(v <= tol for v in self.max_violation(x).values())

    def to_json(self) -> str:
        """Debug dump: variables plus sparse triplets for every constraint block."""

        def triplets(mat):
            coo = sp.coo_matrix(mat)
            return [[int(r), int(c), float(v)] for r, c, v in zip(coo.row, coo.col, coo.data)]

        def bound(v):
            return None if not math.isfinite(v) else float(v)

        doc = {
            "variables": [
                {"name": n, "lb": bound(lo), "ub": bound(hi)} for n, lo, hi in zip(self.index.names, self.lb, self.ub)
            ],
            "objective": {"P": triplets(self.p), "q": self.q.tolist(), "const": self.const},
            "equalities": {"A": triplets(self.a_eq), "b": self.b_eq.tolist(), "labels": self.eq_labels},
            "inequalities": {"A": triplets(self.a_ub), "b": self.b_ub.tolist(), "labels": self.ub_labels},
            "soc": [
                {"label": c.label, "A": triplets(c.a), "b": c.b.tolist(), "c": triplets(c.c), "d": c.d}
                for c in self.soc
            ],
            "one_hot_groups": [g.tolist() for g in self.groups],
        }
        return json.dumps(doc)


class _Rows:
    """Accumulates sparse affine rows ``sum(coef * x[col]) (op) rhs``."""

    def __init__(self):
        self.rows: list[tuple[list[int], list[float]]] = []
        self.rhs: list[float] = []
        self.labels: list[str] = []

    def add(self, terms: Iterable[tuple[int, float]], rhs: float, label: str) -> None:
        cols, vals = [], []
        for c, v in terms:
            if v != 0.0:
                cols.append(c)
                vals.append(float(v))
        self.rows.append((cols, vals))
        self.rhs.append(float(rhs))
        self.labels.append(label)

    def matrix(self, n: int) -> tuple[sp.csr_matrix, np.ndarray]:
        data, indices, indptr = [], [], [0]
        for cols, vals in self.rows:
            indices.extend(cols)
            data.extend(vals)
            indptr.append(len(indices))
        mat = sp.csr_matrix((data, indices, indptr), shape=(len(self.rows), n))
        return mat, np.array(self.rhs, dtype=float)


def voltage_bound_discs(scenario: Scenario, model: SequenceNetworkModel) -> tuple[np.ndarray, np.ndarray]:
    """Outer bound on the reachable positive-sequence voltage at each bus.

    Phase limits imply ``|I+_s| <= Imax_s`` (the mean squared phase peak is
    ``|I+|^2 + |I-|^2``), so ``V+_i`` lies in the disc with centre
    ``(H 1)_i V0+`` and radius ``sum_s |Zeq_is| Imax_s``.
    """
    centre = model.h.sum(axis=1) * scenario.v0_plus.value
    radius = np.zeros(model.m)
    for ibr in scenario.ibrs:
        radius += np.abs(model.z_eq[:, ibr.bus - 1]) * ibr.i_max
    return centre, radius


def candidate_sides(centre: complex, radius: float, n: int) -> np.ndarray:
    """Polygon sides whose normal can be nearest to a voltage in the disc.

    Selecting the side with the largest projection only loosens the upper
    bound on ``V+`` without touching any other constraint, so some optimum
    always uses a side returned here.
    """
    half = math.pi / n
    if abs(centre) <= radius * (1.0 + 1e-9):
        return np.arange(n)
    spread = math.asin(min(1.0, radius / abs(centre)))
    mid = math.atan2(centre.imag, centre.real)
    theta = 2.0 * math.pi * np.arange(n) / n
    dist = np.abs(np.angle(np.exp(1j * (theta - mid))))
    return np.flatnonzero(dist <= spread + half + 1e-9)


def _widen(cone: SocConstraint, n: int) -> SocConstraint:
    """Pad a cone built before later variables were declared."""
    if cone.a.shape[1] == n:
        return cone
    a, c = cone.a.copy(), cone.c.copy()
    a.resize((a.shape[0], n))
    c.resize((1, n))
    return SocConstraint(a.tocsr(), cone.b, c.tocsr(), cone.d, cone.label)


class ProblemBuilder:
    """Assembles the program step by step; call :meth:`finish` at the end."""

    def __init__(self, scenario: Scenario, model: SequenceNetworkModel, polygon: PolygonConfig | None = None):
        self.scenario = scenario
        self.model = model
        self.polygon = polygon or PolygonConfig(scenario.polygon_sides, scenario.big_m)
        self.index = VariableIndex()
        self.eq = _Rows()
        self.ub = _Rows()
        self.soc: list[SocConstraint] = []
        self.groups: list[np.ndarray] = []
        self.group_buses: list[int] = []
        self.candidates: list[np.ndarray] = []
        self._lb: dict[int, float] = {}
        self._ub: dict[int, float] = {}
        self._p_diag: dict[int, float] = {}
        self._q: dict[int, float] = {}
        self.const = 0.0
        self._declare_variables()

    # -- variables ----------------------------------------------------------

    def _bound(self, col: int, lo: float = -math.inf, hi: float = math.inf) -> None:
        self._lb[col] = max(self._lb.get(col, -math.inf), lo)
        self._ub[col] = min(self._ub.get(col, math.inf), hi)

    def _declare_variables(self) -> None:
        sc = self.scenario
        for ibr in sc.ibrs:
            for comp in CUR:
                # |I+|, |I-| <= Imax follows from the phase limits
                self._bound(self.index.add(f"{comp}[{ibr.bus}]"), -ibr.i_max, ibr.i_max)
            for kind in ("P", "Q"):
                self.index.add(f"{kind}[{ibr.bus}]")
        for i in range(1, sc.m + 1):
            for comp in VDQ:
                self.index.add(f"{comp}[{i}]")
            for seq in "+-":
                self._bound(self.index.add(f"V{seq}[{i}]"), 0.0, sc.v_ph_pk)
        for i in sc.regulated_set:
            cols = []
            for k in range(self.polygon.n):
                col = self.index.add(f"x[{i},{k}]")
                self._bound(col, 0.0, 1.0)
                cols.append(col)
            self.groups.append(np.array(cols))
            self.group_buses.append(i)

    # -- constraints ---------------------------------------------------------

    def add_voltage_coupling(self) -> None:
        """Nodal DQ components as affine functions of the IBR currents."""
        sc, mdl = self.scenario, self.model
        g, b = mdl.h.real.sum(axis=1), mdl.h.imag.sum(axis=1)
        r, x = mdl.z_eq.real, mdl.z_eq.imag
        vp, cp, sp_ = sc.v0_plus.magnitude, math.cos(sc.v0_plus.angle), math.sin(sc.v0_plus.angle)
        vn, cn, sn = sc.v0_minus.magnitude, math.cos(sc.v0_minus.angle), math.sin(sc.v0_minus.angle)
        idx = self.index
        for i in range(1, sc.m + 1):
            row = i - 1
            const = {
                "Vd+": vp * (g[row] * cp - b[row] * sp_),
                "Vq+": vp * (g[row] * sp_ + b[row] * cp),
                "Vd-": vn * (g[row] * cn + b[row] * sn),
                "Vq-": vn * (g[row] * sn - b[row] * cn),
            }
            terms: dict[str, list[tuple[int, float]]] = {k: [] for k in VDQ}
            for ibr in sc.ibrs:
                j = ibr.bus
                rij, xij = r[row, j - 1], x[row, j - 1]
                idp, iqp = idx.current(j, "Id+"), idx.current(j, "Iq+")
                idn, iqn = idx.current(j, "Id-"), idx.current(j, "Iq-")
                terms["Vd+"] += [(idp, rij), (iqp, -xij)]
                terms["Vq+"] += [(iqp, rij), (idp, xij)]
                terms["Vd-"] += [(idn, rij), (iqn, xij)]
                terms["Vq-"] += [(iqn, rij), (idn, -xij)]
            for comp in VDQ:
                # V - sum(coef * I) = const
                self.eq.add(
                    [(idx.voltage(i, comp), 1.0)] + [(c, -v) for c, v in terms[comp]],
                    const[comp],
                    f"coupling {comp}[{i}]",
                )

    def add_voltage_soc(self) -> None:
        n = len(self.index)
        for i in range(1, self.scenario.m + 1):
            for seq in "+-":
                cols = [self.index.voltage(i, f"Vd{seq}"), self.index.voltage(i, f"Vq{seq}")]
                a = sp.csr_matrix(([1.0, 1.0], ([0, 1], cols)), shape=(2, n))
                c = sp.csr_matrix(([1.0], ([0], [self.index.magnitude(i, seq)])), shape=(1, n))
                self.soc.append(SocConstraint(a, np.zeros(2), c, 0.0, f"|V{seq}[{i}]|"))

    def add_current_soc(self) -> None:
        """Three phase-current cones per IBR, inner expressions affine in currents."""
        cc, ss = math.cos(4.0 * math.pi / 3.0), math.sin(4.0 * math.pi / 3.0)
        n = len(self.index)
        for ibr in self.scenario.ibrs:
            s = ibr.bus
            idp, iqp, idn, iqn = (self.index.current(s, c) for c in CUR)
            phases = {
                "a": ([(idp, 1.0), (idn, 1.0)], [(iqp, 1.0), (iqn, -1.0)]),
                "b": ([(idp, 1.0), (idn, cc), (iqn, ss)], [(iqp, 1.0), (idn, ss), (iqn, -cc)]),
                "c": ([(idp, cc), (idn, 1.0), (iqp, -ss)], [(iqp, cc), (idp, ss), (iqn, -1.0)]),
            }
            for ph, (row0, row1) in phases.items():
                rows, cols, vals = [], [], []
                for r_, terms in enumerate((row0, row1)):
                    for col, v in terms:
                        rows.append(r_)
                        cols.append(col)
                        vals.append(v)
                a = sp.csr_matrix((vals, (rows, cols)), shape=(2, n))
                self.soc.append(SocConstraint(a, np.zeros(2), sp.csr_matrix((1, n)), ibr.i_max, f"i_{ph}[{s}]"))

    def add_polygon_tightening(self, tighten_m: bool = True) -> None:
        """Big-M rows ``V+cos(pi/n) <= Vd+cos(t_k) + Vq+sin(t_k) + M(1 - x_k)``.

        With ``tighten_m`` each row gets the smallest constant that is still
        provably loose when its side is not selected, using the voltage
        discs of :func:`voltage_bound_discs`.  Candidate sides are recorded
        for the branch-and-bound dominance presolve.
        """
        sc, pol = self.scenario, self.polygon
        theta, shrink = pol.theta, pol.shrink
        centre, radius = voltage_bound_discs(sc, self.model)
        m_eff = pol.effective_big_m
        for g, i in enumerate(self.group_buses):
            vplus = self.index.magnitude(i, "+")
            vd, vq = self.index.voltage(i, "Vd+"), self.index.voltage(i, "Vq+")
            c_i, r_i = centre[i - 1], radius[i - 1]
            for k in range(pol.n):
                big_m = m_eff
                if tighten_m:
                    lowest_proj = max(c_i.real * math.cos(theta[k]) + c_i.imag * math.sin(theta[k]) - r_i, -sc.v_ph_pk)
                    big_m = min(m_eff, sc.v_ph_pk * shrink - lowest_proj)
                    big_m = max(big_m, 0.0)
                xk = self.groups[g][k]
                # V+ shrink - Vd cos - Vq sin + M x_k <= M
                self.ub.add(
                    [(vplus, shrink), (vd, -math.cos(theta[k])), (vq, -math.sin(theta[k])), (xk, big_m)],
                    big_m,
                    f"tighten[{i},{k}]",
                )
            self.eq.add([(col, 1.0) for col in self.groups[g]], 1.0, f"one_hot[{i}]")
            self.candidates.append(candidate_sides(c_i, r_i, pol.n))

    def add_power_polygon(
        self,
        v_hat: Mapping[int, Sequence[float]] | FlowResult,
        i_hat: Mapping[int, Sequence[float]] | None = None,
    ) -> None:
        """P/Q definitions, inscribed-polygon cap and floors.

        ``v_hat`` gives ``(Vd+, Vq+, Vd-, Vq-)`` per IBR bus, or a full flow
        result to read them from.  Without ``i_hat`` the voltages are simply
        frozen in ``V conj(I)``.  With ``i_hat`` (the currents that produced
        ``v_hat``) the product is replaced by its first-order expansion
        ``V_hat conj(I) + V conj(I_hat) - V_hat conj(I_hat)``, which keeps the
        dependence of the local voltage on every injection.  Both forms are
        exact when ``I == i_hat`` and ``V == v_hat``.
        """
        sc, pol = self.scenario, self.polygon
        theta, shrink = pol.theta, pol.shrink
        for ibr in sc.ibrs:
            s = ibr.bus
            vdp, vqp, vdn, vqn = v_hat.bus_dq(s) if isinstance(v_hat, FlowResult) else v_hat[s]
            idp, iqp, idn, iqn = (self.index.current(s, c) for c in CUR)
            pc, qc = self.index.power(s, "P"), self.index.power(s, "Q")
            p_terms = [(pc, 1.0), (idp, -1.5 * vdp), (iqp, -1.5 * vqp), (idn, -1.5 * vdn), (iqn, -1.5 * vqn)]
            q_terms = [(qc, 1.0), (idp, -1.5 * vqp), (iqp, 1.5 * vdp), (idn, -1.5 * vqn), (iqn, 1.5 * vdn)]
            p_rhs = q_rhs = 0.0
            if i_hat is not None:
                hdp, hqp, hdn, hqn = (float(v) for v in i_hat[s])
                vd = {seq: self.index.voltage(s, f"Vd{seq}") for seq in "+-"}
                vq = {seq: self.index.voltage(s, f"Vq{seq}") for seq in "+-"}
                for seq, (hd, hq), (ed, eq) in (("+", (hdp, hqp), (vdp, vqp)), ("-", (hdn, hqn), (vdn, vqn))):
                    p_terms += [(vd[seq], -1.5 * hd), (vq[seq], -1.5 * hq)]
                    q_terms += [(vq[seq], -1.5 * hd), (vd[seq], 1.5 * hq)]
                    p_rhs -= 1.5 * (ed * hd + eq * hq)
                    q_rhs -= 1.5 * (eq * hd - ed * hq)
            self.eq.add(p_terms, p_rhs, f"P[{s}]")
            self.eq.add(q_terms, q_rhs, f"Q[{s}]")
            for k in range(pol.n):
                self.ub.add(
                    [(pc, math.cos(theta[k])), (qc, math.sin(theta[k]))], ibr.s_max * shrink, f"S_poly[{s},{k}]"
                )
            self._bound(pc, ibr.p_min, math.inf)
            self._bound(qc, ibr.q_min, math.inf)

    def build_objective(self, config: ObjectiveConfig) -> None:
        v = self.scenario.v_ph_pk
        regulated = config.regulated or self.scenario.regulated_set
        self._negative_and_effort_terms(config, regulated)
        for i in regulated:
            col = self.index.magnitude(i, "+")
            self._p_diag[col] = 2.0 * config.lam / v**2
            self._q[col] = -2.0 * config.lam / v
        self.const = config.lam * len(regulated)

    def build_majorized_objective(self, config: ObjectiveConfig, anchor: Mapping[int, complex]) -> None:
        """Objective whose positive-sequence term bounds the exact one from above.

        ``(|V|/v - 1)^2`` splits into a shortfall part ``(1 - |V|/v)_+^2`` and
        an excess part ``(|V|/v - 1)_+^2``.  The excess part is convex and is
        carried by ``V+ >= |V|``.  In the shortfall part ``|V|`` is replaced by
        its tangent at the anchor phasor, ``Re(V conj(anchor)) / |anchor|``,
        which never exceeds ``|V|``.  The model value therefore bounds the
        exact objective from above and matches it when ``V`` lines up with
        the anchor, so repeated solves descend on the exact objective.
        """
        v = self.scenario.v_ph_pk
        regulated = config.regulated or self.scenario.regulated_set
        self._negative_and_effort_terms(config, regulated)
        if config.lam == 0:
            return
        for i in regulated:
            short = self.index.add(f"short+[{i}]")
            excess = self.index.add(f"excess+[{i}]")
            self._bound(short, 0.0)
            self._bound(excess, 0.0)
            a = complex(anchor[i])
            u = a / abs(a) if abs(a) > 1e-12 else 0j
            vd, vq = self.index.voltage(i, "Vd+"), self.index.voltage(i, "Vq+")
            # short >= 1 - (u.real Vd + u.imag Vq) / v
            self.ub.add([(short, -1.0), (vd, -u.real / v), (vq, -u.imag / v)], -1.0, f"short+[{i}]")
            # excess >= V+ / v - 1
            self.ub.add([(self.index.magnitude(i, "+"), 1.0 / v), (excess, -1.0)], 1.0, f"excess+[{i}]")
            self._p_diag[short] = 2.0 * config.lam
            self._p_diag[excess] = 2.0 * config.lam

    def _negative_and_effort_terms(self, config: ObjectiveConfig, regulated) -> None:
        v = self.scenario.v_ph_pk
        for i in regulated:
            self._p_diag[self.index.magnitude(i, "-")] = 2.0 * config.alpha / v**2
        if config.effort > 0:
            for ibr in self.scenario.ibrs:
                for comp in CUR:
                    self._p_diag[self.index.current(ibr.bus, comp)] = 2.0 * config.effort / ibr.i_max**2

    def finish(self) -> MiConvexProblem:
        n = len(self.index)
        a_eq, b_eq = self.eq.matrix(n)
        a_ub, b_ub = self.ub.matrix(n)
        lb = np.full(n, -math.inf)
        ub = np.full(n, math.inf)
        for col, v in self._lb.items():
            lb[col] = v
        for col, v in self._ub.items():
            ub[col] = v
        diag = np.zeros(n)
        q = np.zeros(n)
        for col, v in self._p_diag.items():
            diag[col] = v
        for col, v in self._q.items():
            q[col] = v
        return MiConvexProblem(
            index=self.index,
            p=sp.diags(diag).tocsc(),
            q=q,
            const=self.const,
            a_eq=a_eq,
            b_eq=b_eq,
            a_ub=a_ub,
            b_ub=b_ub,
            lb=lb,
            ub=ub,
            soc=[_widen(c, n) for c in self.soc],
            groups=list(self.groups),
            eq_labels=list(self.eq.labels),
            ub_labels=list(self.ub.labels),
            candidates=list(self.candidates),
            group_buses=list(self.group_buses),
        )


def build_problem(
    scenario: Scenario,
    model: SequenceNetworkModel,
    v_hat: Mapping[int, Sequence[float]] | FlowResult,
    objective: ObjectiveConfig,
    polygon: PolygonConfig | None = None,
    tighten_m: bool = True,
    i_hat: Mapping[int, Sequence[float]] | None = None,
    anchor: Mapping[int, complex] | None = None,
) -> MiConvexProblem:
    """Assemble the full program.

    With ``anchor`` (positive-sequence phasors per regulated bus) the
    majorized objective of :meth:`ProblemBuilder.build_majorized_objective`
    replaces the relaxed one.
    """
    builder = ProblemBuilder(scenario, model, polygon)
    builder.add_voltage_coupling()
    builder.add_voltage_soc()
    builder.add_current_soc()
    builder.add_polygon_tightening(tighten_m=tighten_m)
    builder.add_power_polygon(v_hat, i_hat)
    if anchor is None:
        builder.build_objective(objective)
    else:
        builder.build_majorized_objective(objective, anchor)
    return builder.finish()
