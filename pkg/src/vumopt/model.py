"""Radial feeder data model and the sequence-domain network matrices.

A feeder has a slack bus 0 and load/IBR buses ``1..m``.  All electrical
quantities are per-unit.  Angles are radians in memory and degrees on disk.

The network matrices follow the path-sum construction for radial feeders::

    Z_ii = sum of line impedances on the path 0 -> i
    Z_ij = sum of line impedances shared by the paths 0 -> i and 0 -> j
    H    = (I + Z Y_L)^-1
    Zeq  = H Z

Negative-sequence matrices are the elementwise conjugates.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "ScenarioError",
    "TopologyError",
    "ModelError",
    "Phasor",
    "Line",
    "IbrSpec",
    "Scenario",
    "SequenceNetworkModel",
    "build_path_sets",
    "build_impedance_matrix",
    "build_equivalent_matrices",
    "build_model",
    "scenario_from_dict",
    "scenario_to_dict",
    "load_scenario",
    "save_scenario",
]


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario data.

    ``where`` names the offending field (``"lines[3].r"``) when known.
    """

    def __init__(self, message: str, where: str | None = None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class TopologyError(ScenarioError):
    """The line set is not a tree rooted at bus 0."""

    def __init__(self, message: str, line_ids: Sequence[int] = ()):
        self.line_ids = tuple(line_ids)
        super().__init__(message, where="lines")


class ModelError(RuntimeError):
    """Numerical failure while building the network matrices."""

    def __init__(self, message: str, condition: float = math.inf):
        self.condition = condition
        super().__init__(f"{message} (condition estimate {condition:.3e})")


def _wrap_angle(angle: float) -> float:
    # map to (-pi, pi]
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Phasor:
    magnitude: float
    angle: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.magnitude) or self.magnitude < 0:
            raise ScenarioError(f"phasor magnitude must be finite and >= 0, got {self.magnitude}")
        if not math.isfinite(self.angle):
            raise ScenarioError(f"phasor angle must be finite, got {self.angle}")
        object.__setattr__(self, "angle", _wrap_angle(float(self.angle)))

    @classmethod
    def from_degrees(cls, magnitude: float, degrees: float) -> "Phasor":
        return cls(float(magnitude), math.radians(degrees))

    @classmethod
    def from_complex(cls, value: complex) -> "Phasor":
        return cls(abs(value), math.atan2(value.imag, value.real))

    @property
    def degrees(self) -> float:
        """Angle in degrees, chosen so that ``from_degrees`` restores ``angle`` bit for bit."""
        deg = math.degrees(self.angle)
        for direction in (math.inf, -math.inf):
            cand = deg
            for _ in range(4):
                if _wrap_angle(math.radians(cand)) == self.angle:
                    return cand
                cand = math.nextafter(cand, direction)
        return deg

    @property
    def value(self) -> complex:
        return complex(self.magnitude * math.cos(self.angle), self.magnitude * math.sin(self.angle))


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float

    @property
    def impedance(self) -> complex:
        return complex(self.r, self.x)


@dataclass(frozen=True)
class IbrSpec:
    """Inverter limits: phase current peak ``i_max``, rating ``s_max`` and P/Q floors."""

    bus: int
    i_max: float
    s_max: float
    p_min: float = -math.inf
    q_min: float = -math.inf


@dataclass(frozen=True)
class Scenario:
    """Complete description of one feeder operating case (per-unit).

    ``loads`` maps bus -> constant complex admittance.  ``regulated_set`` is
    the bus set whose sequence voltages enter the objective; it defaults to
    the IBR buses.
    """

    m: int
    lines: tuple[Line, ...]
    loads: Mapping[int, complex]
    ibrs: tuple[IbrSpec, ...]
    v0_plus: Phasor
    v0_minus: Phasor
    v_ph_pk: float = 1.0
    regulated_set: tuple[int, ...] | None = None
    polygon_sides: int = 8
    big_m: float | None = None
    name: str = ""
    bases: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "ibrs", tuple(sorted(self.ibrs, key=lambda s: s.bus)))
        object.__setattr__(self, "loads", {int(k): complex(v) for k, v in sorted(dict(self.loads).items())})
        object.__setattr__(self, "bases", dict(self.bases))
        if self.regulated_set is None:
            object.__setattr__(self, "regulated_set", tuple(s.bus for s in self.ibrs))
        else:
            object.__setattr__(self, "regulated_set", tuple(sorted(set(int(b) for b in self.regulated_set))))
        if self.big_m is None:
            object.__setattr__(self, "big_m", float(self.v_ph_pk))
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.m, int) or self.m < 1:
            raise ScenarioError(f"bus count must be a positive integer, got {self.m!r}", "m")
        if not self.v_ph_pk > 0:
            raise ScenarioError("must be > 0", "v_ph_pk")
        if not isinstance(self.polygon_sides, int) or self.polygon_sides < 3:
            raise ScenarioError(f"need at least 3 sides, got {self.polygon_sides!r}", "polygon_sides")
        if not self.big_m > 0:
            raise ScenarioError("must be > 0", "big_m")
        for k, line in enumerate(self.lines):
            for end in (line.from_bus, line.to_bus):
                if not 0 <= end <= self.m:
                    raise ScenarioError(f"bus {end} outside 0..{self.m}", f"lines[{k}]")
            if line.from_bus == line.to_bus:
                raise ScenarioError("self loop", f"lines[{k}]")
            if not (math.isfinite(line.r) and line.r >= 0):
                raise ScenarioError(f"resistance must be >= 0, got {line.r}", f"lines[{k}].r")
            if not math.isfinite(line.x):
                raise ScenarioError("reactance must be finite", f"lines[{k}].x")
        for bus in self.loads:
            if not 1 <= bus <= self.m:
                raise ScenarioError(f"bus {bus} outside 1..{self.m}", "loads")
        seen = set()
        for k, ibr in enumerate(self.ibrs):
            where = f"ibrs[{k}]"
            if not 1 <= ibr.bus <= self.m:
                raise ScenarioError(f"bus {ibr.bus} outside 1..{self.m}", where)
            if ibr.bus in seen:
                raise ScenarioError(f"second IBR at bus {ibr.bus}", where)
            seen.add(ibr.bus)
            if not ibr.i_max > 0:
                raise ScenarioError("i_max must be > 0", where)
            if not ibr.s_max > 0:
                raise ScenarioError("s_max must be > 0", where)
            if ibr.p_min > ibr.s_max or ibr.q_min > ibr.s_max:
                raise ScenarioError("power floors exceed s_max", where)
        for bus in self.regulated_set:
            if not 1 <= bus <= self.m:
                raise ScenarioError(f"bus {bus} outside 1..{self.m}", "regulated_set")
        build_path_sets(self)

    @property
    def ibr_buses(self) -> tuple[int, ...]:
        return tuple(s.bus for s in self.ibrs)

    def digest(self) -> str:
        payload = json.dumps(scenario_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def build_path_sets(scenario: Scenario) -> dict[int, frozenset[int]]:
    """Map each bus to the indices of the lines on its path from bus 0.

    Lines are treated as undirected; the tree is explored breadth-first
    from the slack bus.
    """
    adjacency: dict[int, list[tuple[int, int]]] = {b: [] for b in range(scenario.m + 1)}
    for k, line in enumerate(scenario.lines):
        adjacency[line.from_bus].append((line.to_bus, k))
        adjacency[line.to_bus].append((line.from_bus, k))

    paths: dict[int, frozenset[int]] = {0: frozenset()}
    via: dict[int, int] = {0: -1}
    queue = deque([0])
    while queue:
        bus = queue.popleft()
        for nxt, k in adjacency[bus]:
            if k == via[bus]:
                continue
            if nxt in paths:
                cycle = sorted((paths[bus] ^ paths[nxt]) | {k})
                raise TopologyError(
                    "cycle through lines " + ", ".join(_line_label(scenario, j) for j in cycle), cycle
                )
            paths[nxt] = paths[bus] | {k}
            via[nxt] = k
            queue.append(nxt)

    missing = [b for b in range(1, scenario.m + 1) if b not in paths]
    if missing:
        raise TopologyError(f"buses {missing} are not connected to bus 0")
    del paths[0]
    return paths


def _line_label(scenario: Scenario, k: int) -> str:
    line = scenario.lines[k]
    return f"#{k} ({line.from_bus}-{line.to_bus})"


def build_impedance_matrix(scenario: Scenario, path_sets: Mapping[int, frozenset[int]]) -> np.ndarray:
    m = scenario.m
    z_line = np.array([line.impedance for line in scenario.lines], dtype=complex)
    z_net = np.zeros((m, m), dtype=complex)
    for i in range(1, m + 1):
        for j in range(i, m + 1):
            shared = path_sets[i] & path_sets[j]
            value = z_line[list(shared)].sum() if shared else 0.0
            z_net[i - 1, j - 1] = z_net[j - 1, i - 1] = value
    return z_net


def build_equivalent_matrices(z_net: np.ndarray, y_l: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(H, Zeq)`` with ``H = (I + Z Y)^-1`` and ``Zeq = H Z``.

    Both come from LU solves against ``I + Z Y``; no explicit inverse is
    formed.
    """
    m = z_net.shape[0]
    a = np.eye(m, dtype=complex) + z_net @ y_l
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > 1e12:
        raise ModelError("I + Z_net Y_L is singular", cond)
    try:
        h = np.linalg.solve(a, np.eye(m, dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise ModelError(str(exc), cond) from exc
    z_eq = h @ z_net
    return h, z_eq


@dataclass(frozen=True)
class SequenceNetworkModel:
    z_net: np.ndarray
    y_l: np.ndarray
    h: np.ndarray
    z_eq: np.ndarray
    path_sets: Mapping[int, frozenset[int]]

    @property
    def m(self) -> int:
        return self.z_net.shape[0]

    @property
    def z_net_neg(self) -> np.ndarray:
        return self.z_net.conj()

    @property
    def y_l_neg(self) -> np.ndarray:
        return self.y_l.conj()

    @property
    def h_neg(self) -> np.ndarray:
        return self.h.conj()

    @property
    def z_eq_neg(self) -> np.ndarray:
        return self.z_eq.conj()

    def residual(self) -> float:
        """Max-norm residual of ``(I + Z Y) H - I``."""
        a = np.eye(self.m) + self.z_net @ self.y_l
        return float(np.abs(a @ self.h - np.eye(self.m)).max())


def build_model(scenario: Scenario) -> SequenceNetworkModel:
    paths = build_path_sets(scenario)
    z_net = build_impedance_matrix(scenario, paths)
    y = np.zeros(scenario.m, dtype=complex)
    for bus, adm in scenario.loads.items():
        y[bus - 1] += adm
    y_l = np.diag(y)
    h, z_eq = build_equivalent_matrices(z_net, y_l)
    for arr in (z_net, y_l, h, z_eq):
        arr.flags.writeable = False
    return SequenceNetworkModel(z_net=z_net, y_l=y_l, h=h, z_eq=z_eq, path_sets=paths)


# --- JSON --------------------------------------------------------------------


def _require(d: Mapping[str, Any], key: str, where: str) -> Any:
    if not isinstance(d, Mapping):
        raise ScenarioError("expected an object", where or None)
    if key not in d:
        raise ScenarioError("missing field", f"{where}.{key}" if where else key)
    return d[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"expected a number, got {value!r}", where)
    return float(value)


def _integer(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"expected an integer, got {value!r}", where)
    return value


def _phasor(d: Any, where: str) -> Phasor:
    if not isinstance(d, Mapping):
        raise ScenarioError("expected {mag, deg}", where)
    return Phasor.from_degrees(
        _number(_require(d, "mag", where), f"{where}.mag"), _number(_require(d, "deg", where), f"{where}.deg")
    )


def scenario_from_dict(data: Mapping[str, Any]) -> Scenario:
    """Parse the scenario JSON layout (see README) into a :class:`Scenario`."""
    if not isinstance(data, Mapping):
        raise ScenarioError("top level must be an object")
    m = _integer(_require(data, "m", ""), "m")
    v_ph_pk = _number(data.get("v_ph_pk", 1.0), "v_ph_pk")
    slack = _require(data, "slack", "")
    v0p = _phasor(_require(slack, "v0_plus", "slack"), "slack.v0_plus")
    v0m = _phasor(_require(slack, "v0_minus", "slack"), "slack.v0_minus")

    lines = []
    for k, ln in enumerate(_require(data, "lines", "")):
        w = f"lines[{k}]"
        lines.append(
            Line(
                _integer(_require(ln, "from", w), f"{w}.from"),
                _integer(_require(ln, "to", w), f"{w}.to"),
                _number(_require(ln, "r", w), f"{w}.r"),
                _number(_require(ln, "x", w), f"{w}.x"),
            )
        )

    loads: dict[int, complex] = {}
    for k, ld in enumerate(data.get("loads", [])):
        w = f"loads[{k}]"
        bus = _integer(_require(ld, "bus", w), f"{w}.bus")
        adm = complex(_number(_require(ld, "g", w), f"{w}.g"), _number(_require(ld, "b", w), f"{w}.b"))
        loads[bus] = loads.get(bus, 0j) + adm

    ibrs = []
    for k, ib in enumerate(data.get("ibrs", [])):
        w = f"ibrs[{k}]"
        ibrs.append(
            IbrSpec(
                bus=_integer(_require(ib, "bus", w), f"{w}.bus"),
                i_max=_number(_require(ib, "i_max", w), f"{w}.i_max"),
                s_max=_number(_require(ib, "s_max", w), f"{w}.s_max"),
                p_min=_number(ib.get("p_min", -math.inf), f"{w}.p_min"),
                q_min=_number(ib.get("q_min", -math.inf), f"{w}.q_min"),
            )
        )

    reg = data.get("regulated_set", "ibr_buses")
    if reg == "ibr_buses":
        regulated = tuple(s.bus for s in ibrs)
    elif reg == "all_buses":
        regulated = tuple(range(1, m + 1))
    elif isinstance(reg, list):
        regulated = tuple(_integer(b, f"regulated_set[{k}]") for k, b in enumerate(reg))
    else:
        raise ScenarioError(f"expected a list, 'all_buses' or 'ibr_buses', got {reg!r}", "regulated_set")

    big_m = data.get("big_m")
    return Scenario(
        m=m,
        lines=tuple(lines),
        loads=loads,
        ibrs=tuple(ibrs),
        v0_plus=v0p,
        v0_minus=v0m,
        v_ph_pk=v_ph_pk,
        regulated_set=regulated,
        polygon_sides=_integer(data.get("polygon_sides", 8), "polygon_sides"),
        big_m=None if big_m is None else _number(big_m, "big_m"),
        name=str(data.get("name", "")),
        bases={str(k): _number(v, f"bases.{k}") for k, v in dict(data.get("bases", {})).items()},
    )


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    d: dict[str, Any] = {
        "name": scenario.name,
        "m": scenario.m,
        "v_ph_pk": scenario.v_ph_pk,
        "polygon_sides": scenario.polygon_sides,
        "big_m": scenario.big_m,
        "slack": {
            "v0_plus": {"mag": scenario.v0_plus.magnitude, "deg": scenario.v0_plus.degrees},
            "v0_minus": {"mag": scenario.v0_minus.magnitude, "deg": scenario.v0_minus.degrees},
        },
        "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x} for ln in scenario.lines],
        "loads": [{"bus": b, "g": y.real, "b": y.imag} for b, y in scenario.loads.items()],
        "ibrs": [],
        "regulated_set": list(scenario.regulated_set),
    }
    for s in scenario.ibrs:
        entry: dict[str, Any] = {"bus": s.bus, "i_max": s.i_max, "s_max": s.s_max}
        # unbounded floors are simply omitted
        for key in ("p_min", "q_min"):
            value = _finite_or_none(getattr(s, key))
            if value is not None:
                entry[key] = value
        d["ibrs"].append(entry)
    if scenario.bases:
        d["bases"] = dict(scenario.bases)
    return d


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")

