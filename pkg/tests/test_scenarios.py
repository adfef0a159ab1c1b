import math

import numpy as np
import pytest

from vumopt.model import build_model, load_scenario
from vumopt.scenarios import (
    BALANCED,
    CASE1,
    CASE2,
    chain_feeder,
    feeder_23,
    import_feeder_csv,
    random_radial,
    scenario_suite,
    two_bus,
)

from .oracles import paths_by_dfs


def test_suite_builds_and_is_radial():
    suite = scenario_suite()
    assert len(suite) >= 10
    for name, factory in suite.items():
        sc = factory()
        assert sc.name == name
        assert len(paths_by_dfs(sc)) == sc.m + 1
        assert build_model(sc).residual() <= 1e-10


@pytest.mark.parametrize("slack", [CASE1, CASE2, BALANCED])
def test_slack_phasors(slack):
    sc = two_bus(slack)
    (mp, dp), (mn, dn) = slack
    assert sc.v0_plus.magnitude == mp and sc.v0_minus.magnitude == mn
    if mn:
        assert sc.v0_minus.degrees == pytest.approx(dn)


def test_feeder_23_layout():
    sc = feeder_23()
    assert sc.m == 23 and len(sc.ibrs) == 8
    assert sc.regulated_set == tuple(i.bus for i in sc.ibrs)
    assert all(i.p_min < i.s_max for i in sc.ibrs)


def test_chain_feeder_ibrs():
    sc = chain_feeder(8, (2, 5, 8))
    assert sc.ibr_buses == (2, 5, 8)


def test_random_radial_is_reproducible():
    a = random_radial(np.random.default_rng(3), 9)
    b = random_radial(np.random.default_rng(3), 9)
    assert a == b


def test_shipped_files_match_factories():
    root = __import__("pathlib").Path(__file__).resolve().parents[1] / "scenarios"
    assert load_scenario(root / "case1.json").digest() == two_bus(CASE1, "case1").digest()


def test_csv_importer(tmp_path):
    (tmp_path / "lines.csv").write_text("from,to,r,x\n0,1,0.03,0.06\n1,2,0.05,0.10\n")
    (tmp_path / "ibrs.csv").write_text("bus,i_max,s_max,p_min,q_min\n2,1.0,1.2,0.2,-0.6\n")
    (tmp_path / "loads.csv").write_text("bus,g,b\n1,0.1,-0.02\n1,0.1,-0.03\n")
    sc = import_feeder_csv(tmp_path / "lines.csv", tmp_path / "ibrs.csv", tmp_path / "loads.csv", name="case1")
    ref = two_bus(CASE1, "case1")
    assert sc.loads[1] == pytest.approx(0.2 - 0.05j)
    assert sc.lines == ref.lines and sc.ibrs == ref.ibrs
    np.testing.assert_allclose(build_model(sc).z_eq, build_model(ref).z_eq, atol=1e-15)


def test_csv_importer_optional_floors(tmp_path):
    (tmp_path / "lines.csv").write_text("from,to,r,x\n0,1,0.03,0.06\n")
    (tmp_path / "ibrs.csv").write_text("bus,i_max,s_max,p_min,q_min\n1,1.0,1.2,,\n")
    sc = import_feeder_csv(tmp_path / "lines.csv", tmp_path / "ibrs.csv")
    assert sc.ibrs[0].p_min == -math.inf and sc.loads == {}
    assert sc.name == "lines"
