"""Exact sequence-domain power flow and feasibility checking.

Everything here is exact: nodal voltages come from the linear sequence
network, magnitudes are true Euclidean norms and the apparent power cap is
the circle, not a polygon.  The optimizer's output is judged against these
functions.

Frame convention: the shared DQ+ and DQ- frames start aligned with phase a.
A sequence phasor ``I = Id + j Iq`` maps to phase ``p`` as

    i_p(delta) = Re{I+ exp(j(delta + s_p))} + Re{I- exp(-j(delta - s_p))}

with ``s_a = 0``, ``s_b = -2pi/3``, ``s_c = +2pi/3`` and ``delta`` the
instantaneous DQ+ angle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import Phasor, Scenario, SequenceNetworkModel, build_model

__all__ = [
    "PHASES",
    "InjectionSet",
    "FlowResult",
    "DqComponents",
    "solve_sequence_flow",
    "project_dq",
    "phase_current_magnitudes",
    "phase_current_magnitude",
    "sampled_phase_peak",
    "apparent_power",
    "Tolerances",
    "ConstraintCheck",
    "VerificationReport",
    "verify_solution",
]

PHASES = ("a", "b", "c")
_PHASE_SHIFT = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}
_C = math.cos(4.0 * math.pi / 3.0)
_S = math.sin(4.0 * math.pi / 3.0)


@dataclass(frozen=True)
class InjectionSet:
    """Sequence current references of every IBR.

    ``currents[k]`` holds ``(Id+, Iq+, Id-, Iq-)`` for IBR bus ``buses[k]``.
    """

    buses: tuple[int, ...]
    currents: np.ndarray

    def __post_init__(self):
        arr = np.array(self.currents, dtype=float).reshape(len(self.buses), 4)
        if not np.all(np.isfinite(arr)):
            raise ValueError("injections must be finite")
        if len(set(self.buses)) != len(self.buses):
            raise ValueError("duplicate IBR bus in injection set")
        arr.flags.writeable = False
        object.__setattr__(self, "buses", tuple(int(b) for b in self.buses))
        object.__setattr__(self, "currents", arr)

    @classmethod
    def zeros(cls, scenario: Scenario) -> "InjectionSet":
        return cls(scenario.ibr_buses, np.zeros((len(scenario.ibrs), 4)))

    @classmethod
    def from_dict(cls, data: Mapping[int, Sequence[float]]) -> "InjectionSet":
        rows = {int(b): list(v) for b, v in data.items()}
        buses = sorted(rows)
        return cls(tuple(buses), np.array([rows[b] for b in buses], dtype=float).reshape(len(buses), 4))

    def as_dict(self) -> dict[int, tuple[float, float, float, float]]:
        return {b: tuple(float(v) for v in row) for b, row in zip(self.buses, self.currents)}

    def __getitem__(self, bus: int) -> np.ndarray:
        return self.currents[self.buses.index(bus)]

    def complex_vectors(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense length-``m`` complex injection vectors ``(I+, I-)``."""
        i_plus = np.zeros(m, dtype=complex)
        i_minus = np.zeros(m, dtype=complex)
        for bus, (idp, iqp, idn, iqn) in zip(self.buses, self.currents):
            i_plus[bus - 1] = complex(idp, iqp)
            i_minus[bus - 1] = complex(idn, iqn)
        return i_plus, i_minus


@dataclass(frozen=True)
class DqComponents:
    """Per-bus real DQ voltage components, each an array of length m."""

    vd_plus: np.ndarray
    vq_plus: np.ndarray
    vd_minus: np.ndarray
    vq_minus: np.ndarray

    def to_complex(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vd_plus + 1j * self.vq_plus, self.vd_minus + 1j * self.vq_minus


@dataclass(frozen=True)
class FlowResult:
    v_plus: np.ndarray
    v_minus: np.ndarray

    @property
    def m(self) -> int:
        return self.v_plus.shape[0]

    @property
    def dq(self) -> DqComponents:
        return DqComponents(self.v_plus.real, self.v_plus.imag, self.v_minus.real, self.v_minus.imag)

    @property
    def mag_plus(self) -> np.ndarray:
        return np.abs(self.v_plus)

    @property
    def mag_minus(self) -> np.ndarray:
        return np.abs(self.v_minus)

    @property
    def vuf(self) -> np.ndarray:
        vp = self.mag_plus
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(vp > 0, self.mag_minus / np.where(vp > 0, vp, 1.0), np.inf)

    def bus_dq(self, bus: int) -> np.ndarray:
        """``(Vd+, Vq+, Vd-, Vq-)`` at a 1-based bus."""
        vp, vn = self.v_plus[bus - 1], self.v_minus[bus - 1]
        return np.array([vp.real, vp.imag, vn.real, vn.imag])


def solve_sequence_flow(
    model: SequenceNetworkModel, v0_plus: Phasor, v0_minus: Phasor, inj: InjectionSet
) -> FlowResult:
    m = model.m
    i_plus, i_minus = inj.complex_vectors(m)
    ones = np.ones(m)
    v_plus = model.h @ ones * v0_plus.value + model.z_eq @ i_plus
    v_minus = model.h_neg @ ones * v0_minus.value + model.z_eq_neg @ i_minus
    return FlowResult(v_plus, v_minus)


def project_dq(model: SequenceNetworkModel, v0_plus: Phasor, v0_minus: Phasor, inj: InjectionSet) -> DqComponents:
    """Nodal DQ components from the real-valued component equations.

    Works on ``G, B`` (parts of ``H``) and ``R, X`` (parts of ``Zeq``) only;
    no complex products are formed.
    """
    g_sum = model.h.real.sum(axis=1)
    b_sum = model.h.imag.sum(axis=1)
    r, x = model.z_eq.real, model.z_eq.imag

    idp = np.zeros(model.m)
    iqp = np.zeros(model.m)
    idn = np.zeros(model.m)
    iqn = np.zeros(model.m)
    for bus, row in zip(inj.buses, inj.currents):
        idp[bus - 1], iqp[bus - 1], idn[bus - 1], iqn[bus - 1] = row

    cp, sp = math.cos(v0_plus.angle), math.sin(v0_plus.angle)
    cn, sn = math.cos(v0_minus.angle), math.sin(v0_minus.angle)
    vp0, vn0 = v0_plus.magnitude, v0_minus.magnitude

    vd_plus = vp0 * (g_sum * cp - b_sum * sp) + r @ idp - x @ iqp
    vq_plus = vp0 * (g_sum * sp + b_sum * cp) + r @ iqp + x @ idp
    vd_minus = vn0 * (g_sum * cn + b_sum * sn) + r @ idn + x @ iqn
    vq_minus = vn0 * (g_sum * sn - b_sum * cn) + r @ iqn - x @ idn
    return DqComponents(vd_plus, vq_plus, vd_minus, vq_minus)


# --- phase currents ---------------------------------------------------------


def phase_current_magnitudes(currents: np.ndarray) -> np.ndarray:
    """Peak phase currents ``(a, b, c)`` for sequence currents ``(..., 4)``.

    These are the amplitudes left after eliminating the frame angle; the
    phase-c form below agrees with the sampled time-domain maximum.
    """
    c = np.asarray(currents, dtype=float)
    idp, iqp, idn, iqn = c[..., 0], c[..., 1], c[..., 2], c[..., 3]
    ia = np.hypot(idp + idn, iqp - iqn)
    ib = np.hypot(idp + idn * _C + iqn * _S, iqp + idn * _S - iqn * _C)
    ic = np.hypot(idp * _C + idn - iqp * _S, iqp * _C + idp * _S - iqn)
    return np.stack([ia, ib, ic], axis=-1)


def phase_current_magnitude(currents: Sequence[float], phase: str) -> float:
    return float(phase_current_magnitudes(np.asarray(currents))[PHASES.index(phase)])


def _phase_waveform(currents: np.ndarray, delta: np.ndarray, phase: str) -> np.ndarray:
    s = _PHASE_SHIFT[phase]
    idp, iqp, idn, iqn = (currents[..., k, None] for k in range(4))
    pos = idp * np.cos(delta + s) - iqp * np.sin(delta + s)
    neg = idn * np.cos(delta - s) + iqn * np.sin(delta - s)
    return pos + neg


def sampled_phase_peak(currents: np.ndarray, phase: str, samples: int = 3600, refine_iters: int = 60) -> np.ndarray:
    """Max over the frame angle of the reconstructed phase waveform.

    Brute-force grid over ``[0, 2pi)`` followed by a vectorised golden-section
    search in the grid cell pair around each maximum.  Independent of the
    closed forms in :func:`phase_current_magnitudes`.
    """
    c = np.atleast_2d(np.asarray(currents, dtype=float))
    grid = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    wave = _phase_waveform(c, grid[None, :], phase)
    k = np.argmax(wave, axis=1)
    step = grid[1] - grid[0]
    lo = grid[k] - step
    hi = grid[k] + step

    def f(d):
        return _phase_waveform(c, d[:, None], phase)[:, 0]

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    for _ in range(refine_iters):
        x1 = hi - inv_phi * (hi - lo)
        x2 = lo + inv_phi * (hi - lo)
        left = f(x1) > f(x2)
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
    mid = 0.5 * (lo + hi)
    best = np.maximum(f(mid), wave.max(axis=1))
    out = np.maximum(best, 0.0)
    return out if np.ndim(currents) > 1 else out[0]


# --- power -------------------------------------------------------------------


def apparent_power(v_dq: Sequence[float], i_dq: Sequence[float]) -> tuple[float, float, float]:
    """``(P, Q, S)`` from DQ voltage and current components ``(d+, q+, d-, q-)``."""
    vdp, vqp, vdn, vqn = (float(v) for v in v_dq)
    idp, iqp, idn, iqn = (float(i) for i in i_dq)
    p = 1.5 * (vdp * idp + vqp * iqp + vdn * idn + vqn * iqn)
    q = 1.5 * (vqp * idp - vdp * iqp + vqn * idn - vdn * iqn)
    return p, q, math.hypot(p, q)


# --- verification ------------------------------------------------------------


@dataclass(frozen=True)
class Tolerances:
    current: float = 1e-6
    voltage: float = 1e-6
    # successive convexification stops at 1e-4 pu voltage drift, so exact
    # P/Q can sit ~1e-4 off the linearized values used in the model
    power: float = 1e-3


@dataclass(frozen=True)
class ConstraintCheck:
    kind: str
    bus: int
    detail: str
    value: float
    limit: float
    margin: float
    ok: bool

    def describe(self) -> str:
        state = "ok" if self.ok else "VIOLATED"
        return f"{self.kind:<16} bus {self.bus:>3} {self.detail:<8} value={self.value:+.6f} limit={self.limit:+.6f} margin={self.margin:+.3e} {state}"


@dataclass
class VerificationReport:
    checks: list[ConstraintCheck] = field(default_factory=list)
    polygon_excursions: list[ConstraintCheck] = field(default_factory=list)
    relaxation_gaps: list[ConstraintCheck] = field(default_factory=list)
    flow: FlowResult | None = None
    power: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    phase_currents: dict[int, tuple[float, float, float]] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return all(c.ok for c in self.checks) and all(c.ok for c in self.relaxation_gaps)

    @property
    def violations(self) -> list[ConstraintCheck]:
        return [c for c in self.checks + self.relaxation_gaps if not c.ok]

    def worst_margin(self, kind: str) -> float:
        margins = [c.margin for c in self.checks if c.kind == kind]
        return min(margins) if margins else math.inf


def _upper(kind, bus, detail, value, limit, tol):
    return ConstraintCheck(kind, bus, detail, value, limit, limit - value, value <= limit + tol)


def _lower(kind, bus, detail, value, limit, tol):
    return ConstraintCheck(kind, bus, detail, value, limit, value - limit, value >= limit - tol)


def verify_solution(
    scenario: Scenario,
    inj: InjectionSet,
    model: SequenceNetworkModel | None = None,
    tolerances: Tolerances = Tolerances(),
    relaxed_v_plus: Mapping[int, float] | None = None,
    relaxed_v_minus: Mapping[int, float] | None = None,
) -> VerificationReport:
    """Evaluate every operating constraint exactly for a candidate injection.

    Infeasibility is reported, never raised.  When the optimizer's relaxed
    magnitude variables are supplied, their gap to the exact magnitudes is
    checked as well.
    """
    model = model or build_model(scenario)
    flow = solve_sequence_flow(model, scenario.v0_plus, scenario.v0_minus, inj)
    report = VerificationReport(flow=flow)
    vmax = scenario.v_ph_pk

    for i in range(1, scenario.m + 1):
        report.checks.append(_upper("voltage_plus", i, "|V+|", float(flow.mag_plus[i - 1]), vmax, tolerances.voltage))
        report.checks.append(_upper("voltage_minus", i, "|V-|", float(flow.mag_minus[i - 1]), vmax, tolerances.voltage))

    n = scenario.polygon_sides
    theta = 2.0 * math.pi * np.arange(n) / n
    shrink = math.cos(math.pi / n)
    for ibr in scenario.ibrs:
        s = ibr.bus
        cur = inj[s] if s in inj.buses else np.zeros(4)
        mags = phase_current_magnitudes(cur)
        report.phase_currents[s] = tuple(float(v) for v in mags)
        for ph, mag in zip(PHASES, mags):
            report.checks.append(_upper("phase_current", s, ph, float(mag), ibr.i_max, tolerances.current))
        p, q, sa = apparent_power(flow.bus_dq(s), cur)
        report.power[s] = (p, q, sa)
        report.checks.append(_upper("apparent_power", s, "S", sa, ibr.s_max, tolerances.power))
        if math.isfinite(ibr.p_min):
            report.checks.append(_lower("p_floor", s, "P", p, ibr.p_min, tolerances.power))
        if math.isfinite(ibr.q_min):
            report.checks.append(_lower("q_floor", s, "Q", q, ibr.q_min, tolerances.power))
        support = float(np.max(p * np.cos(theta) + q * np.sin(theta)))
        report.polygon_excursions.append(
            _upper("power_polygon", s, "Pcos+Qsin", support, ibr.s_max * shrink, tolerances.power)
        )

    gap_factor = 1.0 / shrink
    for bus, value in (relaxed_v_plus or {}).items():
        exact = float(flow.mag_plus[bus - 1])
        report.relaxation_gaps.append(_lower("relax_plus_low", bus, "V+", value, exact, tolerances.voltage))
        if bus in scenario.regulated_set:
            report.relaxation_gaps.append(
                _upper("relax_plus_high", bus, "V+", value, exact * gap_factor, tolerances.voltage)
            )
    for bus, value in (relaxed_v_minus or {}).items():
        exact = float(flow.mag_minus[bus - 1])
        report.relaxation_gaps.append(_lower("relax_minus_low", bus, "V-", value, exact, tolerances.voltage))
        report.relaxation_gaps.append(_upper("relax_minus_high", bus, "V-", value, exact, tolerances.voltage))
    return report
