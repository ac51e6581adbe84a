import csv
import io

import numpy as np
import pytest

from conftest import quick_config, small_scenario
from ireeopt import baselines as bl
from ireeopt import metrics, traffic
from ireeopt import propagation as prop
from ireeopt.errors import InvalidInputError
from ireeopt.gradients import ObjectiveKind, ParamLayout
from ireeopt.trainer import AdamConfig, TrainerState
from ireeopt import dinkelbach as dk


def _single(p_max=10.0):
    sc = small_scenario(n_bs=1, p_max=p_max)
    lay = ParamLayout(1)
    state = TrainerState.fresh(lay.join(np.array([[250.0, 300.0]]), np.array([sc.b_max]), np.array([0.5 * p_max])))
    frozen = np.zeros(lay.size, dtype=bool)
    frozen[lay.loc] = True
    frozen[lay.bw] = True
    return sc, state, frozen


def test_dbw_conversions():
    assert bl.dbw_to_watts(30) == pytest.approx(1000.0)
    assert bl.watts_to_dbw(bl.dbw_to_watts(17.5)) == pytest.approx(17.5)


def test_objective_kind_parse():
    assert ObjectiveKind.parse("ee") is ObjectiveKind.EE
    assert {k.value for k in ObjectiveKind} == {"iree", "ee", "se"}
    with pytest.raises(InvalidInputError):
        ObjectiveKind.parse("throughput")


def test_ee_single_station_power_matches_grid_search():
    sc, state, frozen = _single()
    cfg = dk.DinkelbachConfig(max_iterations=20, adam=AdamConfig(n_epoch=400))
    res = bl.maximize_ee(sc, cfg, state=state, frozen=frozen)
    assert res.converged
    d0 = state.design(sc.loss_defaults)
    grid = np.linspace(sc.p_max / 1e4, sc.p_max, 10_000)
    ee = [metrics.evaluate(d0.replace_arrays(powers=np.array([p])), sc).ee for p in grid]
    p_star = grid[int(np.argmax(ee))]
    np.testing.assert_array_equal(res.design.locations, d0.locations)
    assert res.design.powers[0] == pytest.approx(p_star, rel=1e-2)
    assert res.value >= max(ee) * (1.0 - 1e-6)


def test_se_single_station_uses_full_power():
    sc, state, frozen = _single()
    res = bl.maximize_se(sc, quick_config(n_epoch=1500), state=state, frozen=frozen)
    assert res.design.powers.sum() == pytest.approx(sc.p_max, rel=1e-3)
    assert res.value == pytest.approx(res.report.c_tot / sc.b_max, rel=1e-12)
    assert res.feasible


@pytest.fixture(scope="module")
def paired():
    sc = small_scenario(seed=2)
    cfg = quick_config(max_iterations=12)
    return sc, {f.__name__: f(sc, cfg, seed=2) for f in (bl.maximize_iree, bl.maximize_ee, bl.maximize_se)}


def test_se_design_beats_ee_design_on_se(paired):
    _, r = paired
    assert r["maximize_se"].report.se >= r["maximize_ee"].report.se


def test_each_optimizer_wins_its_objective(paired):
    _, r = paired
    iree, ee = r["maximize_iree"].report, r["maximize_ee"].report
    assert iree.iree >= ee.iree * (1.0 - 1e-6)
    assert ee.ee >= iree.ee * (1.0 - 1e-6)


def test_ee_trace_is_monotone(paired):
    _, r = paired
    res = r["maximize_ee"]
    assert res.trace.monotonicity_violations == 0
    assert res.value == pytest.approx(res.report.ee, rel=1e-12)


def test_report_identity_between_ee_and_iree(paired):
    _, r = paired
    for res in r.values():
        rep = res.report
        assert rep.ee == pytest.approx(rep.iree * rep.c_tot / ((1.0 - rep.xi) * min(rep.c_tot, rep.d_tot)), rel=1e-9)


def test_result_unpacks_as_triple(paired):
    _, r = paired
    design, value, trace = r["maximize_iree"]
    assert value == r["maximize_iree"].value
    assert trace is r["maximize_iree"].trace


def test_ee_ignores_traffic():
    sc = small_scenario(seed=0)
    other = traffic.lognormal_traffic(sc.grid, 19.0, 2.8, 0.0012, 5.0 * sc.d_tot, seed=99)
    cfg = quick_config(n_epoch=80, max_iterations=2)
    a = bl.maximize_ee(sc, cfg, seed=5, init="uniform")
    b = bl.maximize_ee(sc.with_traffic(other), cfg, seed=5, init="uniform")
    for x, y in zip(a.trace.records, b.trace.records):
        np.testing.assert_array_equal(x.params, y.params)
        assert x.eta_next == y.eta_next


def test_ee_design_on_zero_traffic():
    sc = small_scenario(seed=0)
    zero = sc.with_traffic(traffic.ScalarField(sc.grid, np.zeros(sc.grid.size)))
    cfg = quick_config(n_epoch=80, max_iterations=2)
    try:
        res = bl.maximize_ee(zero, cfg, seed=5, init="uniform")
    except InvalidInputError:
        pytest.skip("zero traffic rejected before the run")
    ref = bl.maximize_ee(sc, cfg, seed=5, init="uniform")
    np.testing.assert_array_equal(res.design.powers, ref.design.powers)


# -- comparison table ---------------------------------------------------------


@pytest.fixture(scope="module")
def table():
    cfg = quick_config(n_epoch=60, max_iterations=2)
    return bl.compare(lambda s: small_scenario(seed=s), [5.0, 10.0], [0, 1], cfg)


def test_compare_schema_and_order(table):
    rows = list(csv.reader(io.StringIO(table.to_csv())))
    assert tuple(rows[0]) == bl.COMPARE_COLUMNS
    body = rows[1:]
    assert len(body) == 2 * 2 * 3
    keys = [(float(r[1]), int(r[-1]), r[0]) for r in body]
    assert keys == [(p, s, o) for p in (5.0, 10.0) for s in (0, 1) for o in ("iree", "ee", "se")]
    for r in table.rows:
        assert r.b_max_hz == 36e9


def test_compare_deterministic(table):
    cfg = quick_config(n_epoch=60, max_iterations=2)
    again = bl.compare(lambda s: small_scenario(seed=s), [5.0, 10.0], [0, 1], cfg)
    assert again.to_csv() == table.to_csv()


def test_compare_select_and_margins(table):
    assert len(table.select(objective="ee")) == 4
    assert len(table.select(p_max_dbw=5.0, seed=1)) == 3
    m = bl.paired_margins(table)
    assert len(m) == 4
    assert set(m[0]) == {"p_max_dbw", "seed", "iree_wins_iree", "ee_wins_ee", "xi_lower"}


def test_compare_rejects_empty_objectives():
    with pytest.raises(InvalidInputError):
        bl.compare(small_scenario(), [10.0], [0], objectives=())


def test_random_design_helper_respects_budgets(rng):
    sc = small_scenario()
    d = prop.random_design(5, sc.grid.area_bounds, sc.b_max, sc.p_max, rng)
    assert d.bandwidths.sum() <= sc.b_max * (1 + 1e-12)
    assert d.powers.sum() <= sc.p_max * (1 + 1e-12)
