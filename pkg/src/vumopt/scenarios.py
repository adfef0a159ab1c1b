"""Built-in feeders, random radial cases and a CSV feeder importer."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Callable

import numpy as np

from .model import IbrSpec, Line, Phasor, Scenario

__all__ = [
    "CASE1",
    "CASE2",
    "EXPERIMENT",
    "BALANCED",
    "two_bus",
    "chain_feeder",
    "feeder_23",
    "experiment_feeder",
    "random_radial",
    "scenario_suite",
    "import_feeder_csv",
]

# slack (V0+, V0-) pairs in (magnitude pu, degrees)
CASE1 = ((0.8, 0.0), (0.1, -90.0))
CASE2 = ((0.6, 0.0), (0.4, -30.0))
EXPERIMENT = ((0.8, 90.0), (0.1, 15.0))
BALANCED = ((0.9, 0.0), (0.0, 0.0))


def _slack(pair):
    (mp, ap), (mn, an) = pair
    return Phasor.from_degrees(mp, ap), Phasor.from_degrees(mn, an)


def two_bus(slack=CASE1, name: str = "two_bus_case1", **ibr_kw) -> Scenario:
    """Slack -> load bus 1 -> IBR bus 2."""
    v0p, v0m = _slack(slack)
    ibr = dict(i_max=1.0, s_max=1.2, p_min=0.2, q_min=-0.6)
    ibr.update(ibr_kw)
    return Scenario(
        m=2,
        lines=(Line(0, 1, 0.03, 0.06), Line(1, 2, 0.05, 0.10)),
        loads={1: 0.20 - 0.05j},
        ibrs=(IbrSpec(bus=2, **ibr),),
        v0_plus=v0p,
        v0_minus=v0m,
        name=name,
    )


def chain_feeder(m: int = 6, ibr_buses=(3, 6), slack=CASE1, name: str = "") -> Scenario:
    v0p, v0m = _slack(slack)
    lines = tuple(Line(i, i + 1, 0.02, 0.04) for i in range(m))
    loads = {i: 0.08 - 0.03j for i in range(1, m + 1)}
    ibrs = tuple(IbrSpec(bus=b, i_max=0.8, s_max=1.0, p_min=0.1, q_min=-0.5) for b in ibr_buses)
    return Scenario(m=m, lines=lines, loads=loads, ibrs=ibrs, v0_plus=v0p, v0_minus=v0m, name=name or f"chain{m}")


# trunk 0-1-...-8, laterals hanging off trunk buses; (parent, r, x) per bus 1..23
_FEEDER_23 = [
    (0, 0.010, 0.025), (1, 0.012, 0.028), (2, 0.012, 0.028), (3, 0.015, 0.030),
    (4, 0.015, 0.030), (5, 0.018, 0.032), (6, 0.018, 0.032), (7, 0.020, 0.035),
    (2, 0.025, 0.030), (9, 0.025, 0.030), (10, 0.030, 0.030),
    (4, 0.025, 0.030), (12, 0.025, 0.030), (13, 0.030, 0.032),
    (6, 0.028, 0.030), (15, 0.028, 0.030), (16, 0.030, 0.032),
    (8, 0.030, 0.032), (18, 0.030, 0.032),
    (3, 0.030, 0.035), (20, 0.030, 0.035),
    (7, 0.032, 0.035), (22, 0.032, 0.035),
]
_FEEDER_23_IBRS = (5, 8, 11, 14, 17, 19, 21, 23)


def feeder_23(slack=CASE1, name: str = "", ibr_buses=_FEEDER_23_IBRS, regulated=None) -> Scenario:
    """Synthetic 23-bus radial community feeder with eight IBRs."""
    v0p, v0m = _slack(slack)
    lines = tuple(Line(parent, bus, r, x) for bus, (parent, r, x) in enumerate(_FEEDER_23, start=1))
    loads = {b: (0.06 if b % 3 else 0.09) - 0.02j for b in range(1, 24)}
    ibrs = []
    for k, b in enumerate(ibr_buses):
        rating = 0.6 if k % 2 else 0.8
        ibrs.append(IbrSpec(bus=b, i_max=rating, s_max=1.25 * rating, p_min=0.15 * rating, q_min=-0.8 * rating))
    return Scenario(
        m=23,
        lines=lines,
        loads=loads,
        ibrs=tuple(ibrs),
        v0_plus=v0p,
        v0_minus=v0m,
        regulated_set=regulated,
        name=name or "feeder23",
        bases={"v_kv": 10.0, "s_mva": 1.0},
    )


def experiment_feeder(slack=EXPERIMENT, name: str = "exp2ibr") -> Scenario:
    """Two IBRs behind a short line pair, same layout as a two-inverter bench."""
    v0p, v0m = _slack(slack)
    return Scenario(
        m=2,
        lines=(Line(0, 1, 0.04, 0.12), Line(0, 2, 0.05, 0.15)),
        loads={1: 0.05 - 0.01j, 2: 0.05 - 0.01j},
        ibrs=(
            IbrSpec(bus=1, i_max=1.0, s_max=1.3, p_min=0.3, q_min=-1.0),
            IbrSpec(bus=2, i_max=1.0, s_max=1.3, p_min=0.3, q_min=-1.0),
        ),
        v0_plus=v0p,
        v0_minus=v0m,
        name=name,
    )


def random_radial(
    rng: np.random.Generator,
    m: int,
    n_ibr: int | None = None,
    slack=None,
    loads: bool = True,
    name: str = "",
) -> Scenario:
    """Random tree on ``0..m`` with random impedances, loads and IBRs."""
    lines = []
    for bus in range(1, m + 1):
        parent = int(rng.integers(0, bus))
        lines.append(Line(parent, bus, float(rng.uniform(0.005, 0.04)), float(rng.uniform(0.01, 0.08))))
    order = [lines[k] for k in rng.permutation(len(lines))]
    load = {}
    if loads:
        for bus in range(1, m + 1):
            if rng.random() < 0.7:
                load[bus] = complex(rng.uniform(0.02, 0.15), -rng.uniform(0.0, 0.05))
    n_ibr = n_ibr if n_ibr is not None else int(rng.integers(1, min(m, 3) + 1))
    ibr_buses = sorted(rng.choice(np.arange(1, m + 1), size=n_ibr, replace=False).tolist())
    ibrs = tuple(
        IbrSpec(bus=int(b), i_max=float(rng.uniform(0.4, 1.0)), s_max=float(rng.uniform(0.6, 1.2)), p_min=0.05, q_min=-0.5)
        for b in ibr_buses
    )
    if slack is None:
        v0p = Phasor.from_degrees(float(rng.uniform(0.6, 0.95)), float(rng.uniform(-30, 30)))
        v0m = Phasor.from_degrees(float(rng.uniform(0.0, 0.3)), float(rng.uniform(-180, 180)))
    else:
        v0p, v0m = _slack(slack)
    return Scenario(
        m=m, lines=tuple(order), loads=load, ibrs=ibrs, v0_plus=v0p, v0_minus=v0m, name=name
    )


def scenario_suite() -> dict[str, Callable[[], Scenario]]:
    """Named scenarios used by the comparison and acceptance runs."""
    return {
        "two_bus_case1": lambda: two_bus(CASE1, "two_bus_case1"),
        "two_bus_case2": lambda: two_bus(CASE2, "two_bus_case2"),
        "two_bus_balanced": lambda: two_bus(BALANCED, "two_bus_balanced"),
        "chain6_case1": lambda: chain_feeder(6, (3, 6), CASE1, "chain6_case1"),
        "chain6_case2": lambda: chain_feeder(6, (3, 6), CASE2, "chain6_case2"),
        "chain8_three_ibr": lambda: chain_feeder(8, (2, 5, 8), CASE1, "chain8_three_ibr"),
        "exp2ibr": lambda: experiment_feeder(),
        "feeder23_case1": lambda: feeder_23(CASE1, "feeder23_case1"),
        "feeder23_case2": lambda: feeder_23(CASE2, "feeder23_case2"),
        "feeder23_balanced": lambda: feeder_23(BALANCED, "feeder23_balanced"),
        "random10_a": lambda: random_radial(np.random.default_rng(11), 10, 3, CASE1, name="random10_a"),
        "random10_b": lambda: random_radial(np.random.default_rng(12), 10, 2, CASE2, name="random10_b"),
    }


def import_feeder_csv(
    lines_csv: str | Path,
    ibrs_csv: str | Path,
    loads_csv: str | Path | None = None,
    slack=CASE1,
    name: str = "",
    v_ph_pk: float = 1.0,
) -> Scenario:
    """Build a scenario from per-unit CSV tables.

    ``lines_csv`` columns: ``from,to,r,x``; ``ibrs_csv``: ``bus,i_max,s_max``
    with optional ``p_min,q_min``; ``loads_csv``: ``bus,g,b``.  Bus 0 is
    the slack; other bus numbers must be ``1..m``.
    """

    def rows(path):
        with open(path, newline="") as fh:
            return [{k.strip().lower(): v.strip() for k, v in r.items()} for r in csv.DictReader(fh)]

    lines = [Line(int(r["from"]), int(r["to"]), float(r["r"]), float(r["x"])) for r in rows(lines_csv)]
    m = max(max(ln.from_bus, ln.to_bus) for ln in lines)
    loads: dict[int, complex] = {}
    if loads_csv is not None:
        for r in rows(loads_csv):
            bus = int(r["bus"])
            loads[bus] = loads.get(bus, 0j) + complex(float(r["g"]), float(r["b"]))
    ibrs = []
    for r in rows(ibrs_csv):
        ibrs.append(
            IbrSpec(
                bus=int(r["bus"]),
                i_max=float(r["i_max"]),
                s_max=float(r["s_max"]),
                p_min=float(r["p_min"]) if r.get("p_min") else -math.inf,
                q_min=float(r["q_min"]) if r.get("q_min") else -math.inf,
            )
        )
    v0p, v0m = _slack(slack)
    return Scenario(
        m=m,
        lines=tuple(lines),
        loads=loads,
        ibrs=tuple(ibrs),
        v0_plus=v0p,
        v0_minus=v0m,
        v_ph_pk=v_ph_pk,
        name=name or Path(lines_csv).stem,
    )
