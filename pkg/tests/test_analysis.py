import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import desk_scenario, quick_config, small_scenario
from ireeopt import analysis, metrics, traffic
from ireeopt import dinkelbach as dk
from ireeopt import propagation as prop
from ireeopt.errors import InvalidInputError


def _uniform(edge, side, d_tot, b_max, p_max=10.0, n_bs=1):
    grid = traffic.make_grid(edge, side)
    per = d_tot / (grid.size * grid.weight)
    return metrics.Scenario(grid, traffic.ScalarField(grid, np.full(grid.size, per)), b_max=b_max, p_max=p_max, n_bs=n_bs)


def _oracle_pd(sc):
    x0, y0, x1, y1 = sc.grid.area_bounds
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    losses = [oracles.path_loss(px, py, cx, cy) for px, py in sc.grid.points.tolist()]
    mean_loss = math.fsum(losses) / len(losses)
    volume = sc.grid.size * sc.grid.weight
    return oracles.central_power(sc.d_tot, volume, sc.b_max, mean_loss)


def test_traffic_power_matches_bisection_toy():
    sc = _uniform(1000.0, 20, 1e9, 1e9)
    assert sc.d_tot == pytest.approx(1e9, rel=1e-12)
    assert analysis.min_traffic_power(sc) == pytest.approx(_oracle_pd(sc), rel=1e-3)


@settings(max_examples=25, deadline=None)
@given(
    edge=st.floats(200.0, 5000.0),
    side=st.integers(3, 15),
    d_exp=st.floats(6.0, 13.0),
    b_exp=st.floats(7.0, 10.6),
)
def test_traffic_power_matches_bisection_random(edge, side, d_exp, b_exp):
    sc = _uniform(edge, side, 10.0 ** d_exp, 10.0 ** b_exp)
    assert analysis.min_traffic_power(sc) == pytest.approx(_oracle_pd(sc), rel=1e-3)


def test_bounds_order_and_edge_cases():
    sc = _uniform(1000.0, 10, 1e12, 1e9, p_max=10.0)
    b = analysis.iree_bounds(sc, 0.2)
    p_d = analysis.min_traffic_power(sc)
    assert p_d < sc.p_max
    assert b.lower <= b.upper
    assert analysis.iree_bounds(sc, 1.0).lower == 0.0
    assert analysis.iree_bounds(sc, 1.0).upper == 0.0
    tight = analysis.iree_bounds(sc.with_budgets(p_max=p_d), 0.3)
    assert tight.lower == pytest.approx(tight.upper, rel=1e-12)


@pytest.mark.parametrize("xi", [-0.01, 1.01, math.nan])
def test_bounds_reject_bad_divergence(xi):
    with pytest.raises(InvalidInputError):
        analysis.iree_bounds(_uniform(1000.0, 5, 1e9, 1e9), xi)


def test_check_eta_verdicts():
    sc = _uniform(1000.0, 10, 1e12, 1e9, p_max=10.0)
    b = analysis.iree_bounds(sc, 0.1)
    mid = 0.5 * (b.lower + b.upper)
    assert analysis.check_eta(mid, 0.1, sc.d_tot, sc).passed
    assert not analysis.check_eta(2.0 * b.upper, 0.1, sc.d_tot, sc).passed
    assert not analysis.check_eta(1.0, 1.0, sc.d_tot, sc).passed
    short = analysis.check_eta(2.0 * b.upper, 0.1, 0.5 * sc.d_tot, sc)
    assert not short.applicable and short.passed


def test_check_bounds_on_converged_small_run():
    sc = small_scenario(seed=1)
    res = dk.solve(sc, quick_config(max_iterations=12), seed=1)
    assert res.converged
    chk = analysis.check_bounds(res.trace, sc)
    last = res.trace.records[-1]
    assert chk.applicable == (last.report.c_tot >= sc.d_tot)
    assert chk.eta == res.eta
    with pytest.raises(InvalidInputError):
        analysis.check_bounds(dk.DinkelbachTrace(), sc)


# -- optimality gap -----------------------------------------------------------


def test_gap_zero_for_single_full_band_station():
    sc = small_scenario()
    d = prop.NetworkDesign.from_arrays(np.array([[100.0, 200.0]]), np.array([sc.b_max]), np.array([1.0]))
    g = analysis.optimality_gap(d, sc)
    assert g.xi_st == pytest.approx(0.0, abs=1e-12)
    assert g.measured == pytest.approx(0.0, abs=1e-9 * g.eta_s)
    assert g.measured <= g.bound + 1e-9 * g.eta_s
    assert g.bound >= 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gap_equal_split_equal_stations(seed):
    sc = desk_scenario(seed)
    n = sc.n_bs
    g = np.linspace(500.0, 4500.0, 5)
    locs = np.array([[x, y] for x in g for y in g])
    d = prop.NetworkDesign.from_arrays(locs, np.full(n, sc.b_max / n), np.full(n, sc.p_max / n))
    gap = analysis.optimality_gap(d, sc)
    assert gap.c_tot_t >= gap.c_tot_s
    assert gap.holds and gap.metric_holds


def test_gap_bound_holds_on_desk_random_designs(rng):
    sc = desk_scenario(0)
    for _ in range(30):
        d = prop.random_design(sc.n_bs, sc.grid.area_bounds, sc.b_max, sc.p_max, rng)
        gap = analysis.optimality_gap(d, sc)
        assert gap.holds, gap


def test_gap_bound_branches():
    # capacity above traffic: D xi_ST / P_T
    assert analysis.gap_bound_value(0.3, 0.1, 2.0, 3.0, 1.0, 4.0) == pytest.approx(0.1 / 4.0)
    # capacity short of traffic
    val = analysis.gap_bound_value(0.3, 0.1, 1.0, 3.0, 2.0, 4.0)
    assert val == pytest.approx((0.7 * 2.0 + 0.1 * 3.0) / (0.8 * 4.0))


def test_metric_gap_bound_holds_on_random_designs(rng):
    sc = small_scenario()
    for _ in range(100):
        d = prop.random_design(5, sc.grid.area_bounds, sc.b_max, sc.p_max, rng)
        g = analysis.optimality_gap(d, sc)
        assert g.measured <= g.metric_bound * (1.0 + 1e-9), g


def test_metric_bound_from_fields_directly(rng):
    # the gap between two arbitrary capacity fields obeys the same bound
    sc = small_scenario()
    for _ in range(50):
        c_s = rng.gamma(0.5, size=sc.grid.size) * 1e9
        c_t = c_s * (1.0 + rng.gamma(0.5, size=sc.grid.size))
        d = sc.traffic.values
        w = sc.capacity_weight
        xi_s = metrics.js_divergence_values(c_s, d)
        xi_t = metrics.js_divergence_values(c_t, d)
        xi_st = metrics.js_divergence_values(c_s, c_t)
        cs, ct = w * c_s.sum(), w * c_t.sum()
        p_t = 50.0
        eta_s = min(cs, sc.d_tot) * (1.0 - xi_s) / p_t
        eta_t = min(ct, sc.d_tot) * (1.0 - xi_t) / p_t
        bound = analysis.metric_gap_bound(xi_s, xi_st, cs, ct, sc.d_tot, p_t)
        assert abs(eta_t - eta_s) <= bound * (1.0 + 1e-9)


def test_literal_gap_bound_has_counterexamples(rng):
    # on a small patch with few samples, the branch-wise bound is beaten often
    sc = small_scenario()
    broken = 0
    for _ in range(30):
        d = prop.random_design(5, sc.grid.area_bounds, sc.b_max, sc.p_max, rng)
        broken += not analysis.optimality_gap(d, sc).holds
    assert broken > 0


# -- smoothness criterion -----------------------------------------------------


def _one_station(sc, loc=(350.0, 350.0), b=None):
    return prop.NetworkDesign.from_arrays(np.array([loc]), np.array([b or sc.b_max]), np.array([1.0]))


def test_smoothness_far_sample_satisfied():
    sc = small_scenario()
    d = _one_station(sc, (0.0, 0.0))
    near = analysis.smoothness_criterion(d, (10.0, 10.0), 1e3, 1e-9, sc)
    far = analysis.smoothness_criterion(d, (5e4, 5e4), 1e3, 1e-9, sc)
    assert far.satisfied
    assert far.margin > near.margin


def test_smoothness_large_l0_satisfied():
    sc = small_scenario()
    chk = analysis.smoothness_criterion(_one_station(sc), (350.0, 350.0), 1e300, 0.0, sc)
    assert chk.satisfied
    assert chk.rhs == pytest.approx(-sc.p_max, rel=1e-6)


def test_smoothness_at_station_with_tight_constants_violated():
    sc = small_scenario()
    chk = analysis.smoothness_criterion(_one_station(sc), (350.0, 350.0), 1e-6, 1e-12, sc)
    assert not chk.satisfied
    assert chk.margin == pytest.approx(chk.lhs - chk.rhs)


def test_smoothness_rejects_negative_constants():
    sc = small_scenario()
    with pytest.raises(InvalidInputError):
        analysis.smoothness_criterion(_one_station(sc), (0.0, 0.0), -1.0, 0.0, sc)


# -- complexity ---------------------------------------------------------------


def test_complexity_formula():
    sc = small_scenario()
    n, m = sc.n_bs, sc.grid.size
    assert analysis.complexity_estimate(sc, n_iterations=3, n_epoch=10) == 10 * 3 * (n * n + m * n)
    assert analysis.complexity_estimate(sc, n_iterations=0, n_epoch=10) == 0
    big = small_scenario(side=10)
    ratio = analysis.complexity_estimate(big, n_iterations=1, n_epoch=1) / analysis.complexity_estimate(
        sc, n_iterations=1, n_epoch=1
    )
    assert ratio == pytest.approx((n * n + big.grid.size * n) / (n * n + m * n))
    cfg = quick_config(n_epoch=7, max_iterations=5)
    assert analysis.complexity_estimate(sc, cfg) == 7 * 5 * (n * n + m * n)


def test_measured_evaluations_equal_epochs_times_iterations():
    sc = small_scenario(seed=4)
    cfg = quick_config(n_epoch=50, max_iterations=3)
    res = dk.solve(sc, cfg, seed=4)
    assert res.trace.evaluations == 50 * len(res.trace.records)
    block = analysis.analysis_block(res, sc, cfg)
    assert block["complexity"]["loss_evaluations"] == res.trace.evaluations
    assert block["complexity"]["predicted"] == analysis.complexity_estimate(sc, n_iterations=len(res.trace.records), n_epoch=50)
