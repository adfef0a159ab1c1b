import math

import numpy as np
import pytest

from vumopt.model import IbrSpec, Line, Phasor, Scenario, build_model
from vumopt.scenarios import BALANCED, CASE1, random_radial, two_bus
from vumopt.seqflow import (
    PHASES,
    InjectionSet,
    apparent_power,
    phase_current_magnitude,
    phase_current_magnitudes,
    project_dq,
    sampled_phase_peak,
    solve_sequence_flow,
    verify_solution,
)

from .oracles import complex_power, dense_flow, phase_peak_by_phasor


def random_injections(rng, scenario, scale=0.5):
    return InjectionSet(scenario.ibr_buses, rng.uniform(-scale, scale, (len(scenario.ibrs), 4)))


def one_bus(v0p=1.0, v0m=0.1):
    return Scenario(
        m=1,
        lines=(Line(0, 1, 0.1, 0.2),),
        loads={},
        ibrs=(IbrSpec(1, 1.0, 1.0),),
        v0_plus=Phasor(v0p),
        v0_minus=Phasor(v0m),
    )


# --- flow ---------------------------------------------------------------------


def test_no_loads_no_injection_keeps_slack_voltage():
    sc = Scenario(
        m=3,
        lines=(Line(0, 1, 0.1, 0.1), Line(1, 2, 0.1, 0.1), Line(1, 3, 0.1, 0.1)),
        loads={},
        ibrs=(),
        v0_plus=Phasor.from_degrees(0.9, 10.0),
        v0_minus=Phasor.from_degrees(0.2, -40.0),
    )
    flow = solve_sequence_flow(build_model(sc), sc.v0_plus, sc.v0_minus, InjectionSet((), np.zeros((0, 4))))
    np.testing.assert_allclose(flow.v_plus, sc.v0_plus.value, atol=1e-15)
    np.testing.assert_allclose(flow.v_minus, sc.v0_minus.value, atol=1e-15)


def test_zero_injection_with_loads_uses_row_sums(case1, case1_model):
    flow = solve_sequence_flow(case1_model, case1.v0_plus, case1.v0_minus, InjectionSet.zeros(case1))
    np.testing.assert_allclose(flow.v_plus, case1_model.h.sum(axis=1) * case1.v0_plus.value, atol=1e-15)


def test_flow_matches_dense_simultaneous_solve(rng):
    for _ in range(25):
        sc = random_radial(rng, 6)
        inj = random_injections(rng, sc)
        flow = solve_sequence_flow(build_model(sc), sc.v0_plus, sc.v0_minus, inj)
        vp, vn = dense_flow(sc, inj.as_dict())
        np.testing.assert_allclose(flow.v_plus, vp, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(flow.v_minus, vn, rtol=1e-10, atol=1e-12)


def test_flow_is_affine_in_injections(rng):
    sc = random_radial(rng, 7, n_ibr=3)
    mdl = build_model(sc)
    x, y = random_injections(rng, sc), random_injections(rng, sc)
    zero = InjectionSet.zeros(sc)
    a, b = 0.7, -1.3

    def flow(inj):
        return solve_sequence_flow(mdl, sc.v0_plus, sc.v0_minus, inj)

    combo = InjectionSet(sc.ibr_buses, a * x.currents + b * y.currents)
    base = flow(zero)
    for attr in ("v_plus", "v_minus"):
        lhs = getattr(flow(combo), attr) - getattr(base, attr)
        rhs = a * (getattr(flow(x), attr) - getattr(base, attr)) + b * (getattr(flow(y), attr) - getattr(base, attr))
        np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_balanced_slack_zero_injection_has_no_unbalance():
    sc = two_bus(BALANCED)
    flow = solve_sequence_flow(build_model(sc), sc.v0_plus, sc.v0_minus, InjectionSet.zeros(sc))
    np.testing.assert_array_equal(flow.vuf, 0.0)


def test_magnitudes_and_vuf(case1, case1_model, rng):
    flow = solve_sequence_flow(case1_model, case1.v0_plus, case1.v0_minus, random_injections(rng, case1))
    dq = flow.dq
    np.testing.assert_allclose(flow.mag_plus, np.hypot(dq.vd_plus, dq.vq_plus), rtol=1e-15)
    np.testing.assert_allclose(flow.vuf, flow.mag_minus / flow.mag_plus, rtol=1e-15)
    np.testing.assert_allclose(flow.bus_dq(2), [dq.vd_plus[1], dq.vq_plus[1], dq.vd_minus[1], dq.vq_minus[1]])


# --- DQ projection ----------------------------------------------------------


@pytest.mark.parametrize(
    "currents, expected",
    [
        ((1.0, 0.0, 0.0, 0.0), (1.1, 0.2, 0.1, 0.0)),
        ((0.0, 0.0, 1.0, 0.0), (1.0, 0.0, 0.2, -0.2)),
    ],
)
def test_projection_substitution_example(currents, expected):
    sc = one_bus()
    dq = project_dq(build_model(sc), sc.v0_plus, sc.v0_minus, InjectionSet((1,), [currents]))
    got = (dq.vd_plus[0], dq.vq_plus[0], dq.vd_minus[0], dq.vq_minus[0])
    assert got == pytest.approx(expected, abs=1e-15)


def test_projection_matches_complex_flow(rng):
    for _ in range(20):
        sc = random_radial(rng, int(rng.integers(2, 9)))
        mdl = build_model(sc)
        inj = random_injections(rng, sc)
        vp, vn = project_dq(mdl, sc.v0_plus, sc.v0_minus, inj).to_complex()
        flow = solve_sequence_flow(mdl, sc.v0_plus, sc.v0_minus, inj)
        np.testing.assert_allclose(vp, flow.v_plus, atol=1e-12)
        np.testing.assert_allclose(vn, flow.v_minus, atol=1e-12)


# --- phase currents ---------------------------------------------------------


@pytest.mark.parametrize(
    "currents, expected",
    [
        ((1.0, 0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
        ((0.0, 0.0, 1.0, 0.0), (1.0, 1.0, 1.0)),
        ((1.0, 0.0, 0.5, 0.0), (1.5, math.sqrt(0.75), math.sqrt(0.75))),
        ((0.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
    ],
)
def test_phase_magnitude_examples(currents, expected):
    got = phase_current_magnitudes(np.array(currents))
    np.testing.assert_allclose(got, expected, atol=1e-12)
    for phase, value in zip(PHASES, expected):
        assert phase_current_magnitude(currents, phase) == pytest.approx(value, abs=1e-12)
        assert sampled_phase_peak(np.array(currents), phase) == pytest.approx(value, abs=1e-9)


def test_closed_forms_match_phasor_oracle(rng):
    cur = rng.uniform(-2, 2, (1000, 4))
    got = phase_current_magnitudes(cur)
    for k, phase in enumerate(PHASES):
        np.testing.assert_allclose(got[:, k], phase_peak_by_phasor(cur, phase), rtol=1e-12)


def test_phase_c_form_as_printed_matches_sampling(rng):
    # squared terms written out the way the phase-c limit is usually stated
    c, s = math.cos(4 * math.pi / 3), math.sin(4 * math.pi / 3)
    cur = rng.uniform(-1, 1, (200, 4))
    idp, iqp, idn, iqn = cur.T
    printed = np.hypot(idp * c + idn - iqp * s, iqp * c + idp * s - iqn)
    np.testing.assert_allclose(printed, sampled_phase_peak(cur, "c"), rtol=1e-9)


def test_sampling_on_batch_matches_scalar(rng):
    cur = rng.uniform(-1, 1, (5, 4))
    batch = sampled_phase_peak(cur, "b")
    for row, value in zip(cur, batch):
        assert sampled_phase_peak(row, "b") == pytest.approx(value, rel=1e-12)


# --- power --------------------------------------------------------------------


@pytest.mark.parametrize(
    "v, i, expected",
    [
        ((1, 0, 0, 0), (1, 0, 0, 0), (1.5, 0.0)),
        ((0, 1, 0, 0), (1, 0, 0, 0), (0.0, 1.5)),
        ((0, 0, 1, 0), (0, 0, 0, 1), (0.0, -1.5)),
    ],
)
def test_apparent_power_examples(v, i, expected):
    p, q, s = apparent_power(v, i)
    assert (p, q) == pytest.approx(expected)
    assert s == pytest.approx(math.hypot(*expected))


def test_apparent_power_matches_complex_oracle(rng):
    for _ in range(200):
        v = rng.normal(size=4)
        i = rng.normal(size=4)
        p, q, s = apparent_power(v, i)
        ref = complex_power(complex(v[0], v[1]), complex(v[2], v[3]), complex(i[0], i[1]), complex(i[2], i[3]))
        assert p == pytest.approx(ref.real, abs=1e-12)
        assert q == pytest.approx(ref.imag, abs=1e-12)
        assert s == pytest.approx(abs(ref), abs=1e-12)


# --- verification -------------------------------------------------------------


def test_phase_current_violation_is_reported(case1):
    inj = InjectionSet((2,), [[0.8, 0.0, 0.3, 0.0]])
    rep = verify_solution(case1, inj)
    assert not rep.feasible
    bad = [c for c in rep.violations if c.kind == "phase_current"]
    assert [(c.bus, c.detail) for c in bad] == [(2, "a")]
    assert bad[0].margin == pytest.approx(-0.1)


@pytest.mark.parametrize("p_min, q_min, ok", [(-0.1, -0.1, True), (0.0, 0.0, True), (0.2, -0.6, False), (-1, 0.05, False)])
def test_zero_injection_feasible_iff_floors_nonpositive(p_min, q_min, ok):
    sc = two_bus(CASE1, p_min=p_min, q_min=q_min)
    rep = verify_solution(sc, InjectionSet.zeros(sc))
    assert rep.feasible is ok
    if not ok:
        assert {c.kind for c in rep.violations} <= {"p_floor", "q_floor"}


def test_relaxation_gap_checks(case1):
    inj = InjectionSet((2,), [[0.1, -0.3, 0.0, 0.1]])
    exact = verify_solution(case1, inj).flow
    vp, vn = float(exact.mag_plus[1]), float(exact.mag_minus[1])
    good = verify_solution(case1, inj, relaxed_v_plus={2: vp * 1.05}, relaxed_v_minus={2: vn})
    assert len(good.relaxation_gaps) == 4
    assert all(c.ok for c in good.relaxation_gaps)
    too_high = verify_solution(case1, inj, relaxed_v_plus={2: vp * 1.09})
    assert [c.kind for c in too_high.relaxation_gaps if not c.ok] == ["relax_plus_high"]
    too_low = verify_solution(case1, inj, relaxed_v_minus={2: vn - 1e-3})
    assert [c.kind for c in too_low.relaxation_gaps if not c.ok] == ["relax_minus_low"]
    loose = verify_solution(case1, inj, relaxed_v_minus={2: vn + 1e-3})
    assert [c.kind for c in loose.relaxation_gaps if not c.ok] == ["relax_minus_high"]


def test_polygon_excursion_is_informational(case1):
    # S under the rating but outside the inscribed octagon
    rep = verify_solution(case1, InjectionSet((2,), [[0.88, 0.0, 0.0, 0.0]]))
    assert rep.power[2][2] < 1.2
    assert not rep.polygon_excursions[0].ok
    assert rep.feasible


def test_injection_set_validation():
    with pytest.raises(ValueError):
        InjectionSet((1, 1), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        InjectionSet((1,), [[math.nan, 0, 0, 0]])
    inj = InjectionSet.from_dict({"3": [1, 2, 3, 4], 1: [0, 0, 0, 0]})
    assert inj.buses == (1, 3)
    np.testing.assert_array_equal(inj[3], [1, 2, 3, 4])
    with pytest.raises(ValueError):
        inj.currents[0, 0] = 1.0
