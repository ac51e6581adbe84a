import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_scenario
from ireeopt import _accel, kernels, metrics
from ireeopt import gradients as gr
from ireeopt import propagation as prop
from ireeopt.errors import InvalidInputError


def _theta(sc, rng, budget_scale=1.0):
    des = prop.random_design(
        sc.n_bs, sc.grid.area_bounds, sc.b_max * budget_scale, sc.p_max * budget_scale, rng, sc.loss_defaults
    )
    return gr.ParamVector.from_design(des).values, des


def test_layout_roundtrip(rng):
    sc = small_scenario()
    theta, des = _theta(sc, rng)
    pv = gr.ParamVector(theta, gr.ParamLayout(sc.n_bs))
    back = pv.to_design()
    np.testing.assert_array_equal(back.locations, des.locations)
    np.testing.assert_array_equal(back.powers, des.powers)
    with pytest.raises(InvalidInputError):
        gr.ParamLayout(3).split(np.zeros(8))


def test_floors():
    lay = gr.ParamLayout(2)
    pv = gr.ParamVector(lay.join(np.zeros((2, 2)), [-5.0, 2.0], [0.0, 1.0]), lay).apply_floors()
    _, bw, pw = lay.split(pv.values)
    assert bw[0] == gr.B_FLOOR and pw[0] == gr.P_FLOOR and bw[1] == 2.0


def test_loss_terms_match_metrics(rng):
    sc = small_scenario()
    theta, des = _theta(sc, rng)
    r = metrics.evaluate(des, sc)
    eta = 0.7 * r.iree
    b = gr.loss(theta, eta, 0.0, sc)
    assert b.c_tot == pytest.approx(r.c_tot, rel=1e-12)
    assert b.xi == pytest.approx(r.xi, abs=1e-12)
    expect = -metrics.given_iree_utility(des, sc, eta) / sc.d_tot
    assert b.utility_term + b.power_term == pytest.approx(expect, rel=1e-10, abs=1e-14)
    assert b.penalty_term == 0.0


def test_penalty_term(rng):
    sc = small_scenario()
    theta, des = _theta(sc, rng, budget_scale=2.0)
    b0 = gr.loss(theta, 0.0, 0.0, sc)
    b = gr.loss(theta, 0.0, 10.0, sc)
    res = metrics.feasibility_residual(des, sc)
    expect = 10.0 * (res.zeta + res.bandwidth / sc.b_max + res.power / sc.p_max)
    assert b.penalty_term == pytest.approx(expect, rel=1e-10)
    assert b.utility_term == b0.utility_term


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 1.5), st.floats(0.0, 2.0), st.sampled_from([0.0, 1.0, 100.0]))
def test_gradient_matches_differences(seed, budget, eta_frac, omega):
    rng = np.random.default_rng(seed)
    sc = small_scenario(seed=seed % 7)
    theta, des = _theta(sc, rng, budget)
    eta = eta_frac * metrics.evaluate(des, sc).iree
    res = gr.gradient_check(gr.LossModel(sc), theta, eta, omega)
    assert res.passed, res
    assert res.n_checked + res.n_excluded == theta.size


@pytest.mark.parametrize("objective", ["ee", "se"])
def test_capacity_objective_gradients(objective, rng):
    sc = small_scenario()
    theta, des = _theta(sc, rng)
    k = metrics.evaluate(des, sc).c_tot
    eta = 0.0 if objective == "se" else 0.5 * k / metrics.power_total(des, sc.power_model)
    model = gr.LossModel(sc, objective, k)
    lay = gr.ParamLayout(sc.n_bs)
    theta[lay.pw] *= 1.3
    theta[lay.bw] *= 0.8
    res = gr.gradient_check(model, theta, eta, 100.0)
    assert res.passed and res.n_checked > 0


def test_sample_measure_gradient(rng):
    sc = small_scenario(measure="sample")
    theta, des = _theta(sc, rng)
    eta = 0.5 * metrics.evaluate(des, sc).iree
    assert gr.gradient_check(gr.LossModel(sc), theta, eta, 100.0).passed


def test_injected_bug_is_caught(rng):
    sc = small_scenario()
    theta, des = _theta(sc, rng, 1.2)
    model = gr.LossModel(sc)

    def bad(t, e, o):
        g = model.grad(t, e, o)
        g[-1] *= 1.01
        return g

    assert not gr.gradient_check(model, theta, 0.0, 0.0, grad_fn=bad).passed


def test_fd_step_antisymmetry(rng):
    sc = small_scenario()
    theta, _ = _theta(sc, rng)
    model = gr.LossModel(sc)
    h = gr.fd_steps(theta, 1e-6)
    a = gr._fd_model(model, theta, 0.0, 0.0, h)
    b = gr._fd_model(model, theta, 0.0, 0.0, -h)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0.0)


def test_frozen_direction_has_zero_difference():
    # a station with no bandwidth contributes nothing, so its power is a flat direction
    sc = small_scenario()
    lay = gr.ParamLayout(sc.n_bs)
    theta = lay.join(np.full((sc.n_bs, 2), 300.0), np.r_[np.full(sc.n_bs - 1, 1e9), 0.0], np.full(sc.n_bs, 0.5))
    g = gr.finite_diff_grad(theta, 0.0, 0.0, sc)
    assert g[lay.pw][-1] == 0.0


def test_relative_errors_definition():
    e = gr.relative_errors([1.0, 0.0, 2.0], [1.0, 1e-20, 2.2])
    assert e[0] == 0.0 and e[2] == pytest.approx(0.2 / 2.2)
    assert e[1] <= 1e-11


def test_kink_mask_flags_budget_edge():
    sc = small_scenario()
    lay = gr.ParamLayout(sc.n_bs)
    theta = lay.join(np.full((sc.n_bs, 2), 300.0), np.full(sc.n_bs, sc.b_max / sc.n_bs), np.full(sc.n_bs, 0.1))
    assert gr.near_kink(gr.LossModel(sc), theta, 1.0).all()


def test_second_order_norm_on_linear_and_quadratic():
    # SE objective at eta=0 with omega=0 is concave in P; check against second differences of the loss
    sc = small_scenario()
    rng = np.random.default_rng(0)
    theta, des = _theta(sc, rng)
    model = gr.LossModel(sc, "se", metrics.evaluate(des, sc).c_tot)
    lay = gr.ParamLayout(sc.n_bs)
    got = gr._second_order_norm(model, theta, 0.0, 0.0)
    diag = []
    for i in np.arange(theta.size)[lay.pw]:
        h = 1e-3 * sc.p_max * (1 + theta[i] / sc.p_max)
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        f0, fu, fd = (model.value(t, 0.0, 0.0) for t in (theta, up, dn))
        diag.append((fu - 2 * f0 + fd) / (h / sc.p_max) ** 2)
    assert got == pytest.approx(np.linalg.norm(diag), rel=1e-3)


def test_backends_agree(rng):
    sc = small_scenario()
    theta, des = _theta(sc, rng, 1.3)
    eta = 0.4 * metrics.evaluate(des, sc).iree
    a = gr.LossModel(sc, backend="numba").loss_and_grad(theta, eta, 5.0)
    b = gr.LossModel(sc, backend="numpy").loss_and_grad(theta, eta, 5.0)
    assert a[0].total == pytest.approx(b[0].total, rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-14 * np.abs(b[1]).max())


def test_backend_env_flag(monkeypatch):
    monkeypatch.setenv(_accel.ENV_VAR, "numpy")
    assert _accel.backend() == "numpy"
    monkeypatch.setenv(_accel.ENV_VAR, "numba")
    assert _accel.backend() in _accel.BACKENDS
    monkeypatch.setenv(_accel.ENV_VAR, "fortran")
    with pytest.raises(ValueError):
        _accel.backend()


def test_numpy_backend_selected_by_env(monkeypatch, rng):
    sc = small_scenario()
    theta, _ = _theta(sc, rng)
    calls = []
    real = kernels.loss_grad_numpy
    monkeypatch.setattr(kernels, "loss_grad_numpy", lambda *a: calls.append(1) or real(*a))
    monkeypatch.setenv(_accel.ENV_VAR, "numpy")
    gr.LossModel(sc).loss(theta, 0.0, 0.0)
    assert calls


@pytest.mark.parametrize("bad", [dict(eta=float("nan")), dict(omega=-1.0)])
def test_loss_input_validation(bad, rng):
    sc = small_scenario()
    theta, _ = _theta(sc, rng)
    args = dict(eta=0.0, omega=0.0)
    args.update(bad)
    with pytest.raises(InvalidInputError):
        gr.LossModel(sc).loss(theta, **args)
    with pytest.raises(InvalidInputError):
        gr.LossModel(sc).loss(np.r_[theta, 1.0], 0.0, 0.0)


def test_capacity_objective_needs_scale():
    with pytest.raises(InvalidInputError):
        gr.LossModel(small_scenario(), "ee")


def test_power_gradient_norm_scaled(rng):
    sc = small_scenario()
    theta, _ = _theta(sc, rng)
    g = gr.grad_loss(theta, 0.0, 0.0, sc)
    lay = gr.ParamLayout(sc.n_bs)
    assert gr.power_gradient_norm(theta, 0.0, 0.0, sc) == pytest.approx(np.linalg.norm(g[lay.pw] * sc.p_max))
