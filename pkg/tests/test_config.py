import math

import numpy as np
import pytest

from ireeopt import config as cfgmod
from ireeopt import traffic
from ireeopt.errors import ScenarioParseError


def test_presets_load_and_differ():
    rural, urban = cfgmod.preset("rural"), cfgmod.preset("urban")
    assert rural.name == "rural" and urban.name == "urban"
    assert rural.shadowing_db == 4.0
    assert urban.shadowing_db == 10.0
    a, b = rural.scenario(0), urban.scenario(0)
    assert a.grid.size == b.grid.size == 36 * 36
    assert a.n_bs == b.n_bs == 25
    assert a.p_max == pytest.approx(1000.0)
    assert a.b_max == 36e9
    assert a.noise_psd == pytest.approx(10.0 ** -20.4, rel=1e-12)
    assert a.power_model.lam == pytest.approx(1.0 / 0.38)
    assert a.d_tot == pytest.approx(8.9e12, rel=1e-9)
    assert b.d_tot == pytest.approx(9.7e12, rel=1e-9)


def test_bare_preset_name_loads():
    assert cfgmod.load("urban").name == "urban"


def test_unknown_preset():
    with pytest.raises(ScenarioParseError):
        cfgmod.preset("suburban")


@pytest.mark.parametrize(
    "text,value",
    [("36G", 36e9), ("36GHz", 36e9), ("3.6e10", 3.6e10), ("500 MHz", 5e8), (2e9, 2e9), ("1.5kHz", 1500.0)],
)
def test_parse_hz(text, value):
    assert cfgmod.parse_hz(text) == pytest.approx(value)


@pytest.mark.parametrize("text", ["36X", "GHz", "", "1e9 Hz Hz"])
def test_parse_hz_rejects(text):
    with pytest.raises(ScenarioParseError):
        cfgmod.parse_hz(text)


def test_noise_conversions():
    assert cfgmod.dbm_hz_to_w_hz(-174.0) == pytest.approx(10.0 ** -20.4)
    assert cfgmod.w_hz_to_dbm_hz(cfgmod.dbm_hz_to_w_hz(-160.0)) == pytest.approx(-160.0)


def test_overrides_and_budget_suffix():
    c = cfgmod.ScenarioConfig.from_yaml(
        "area: {edge_m: 700, samples_per_side: 7}\nbudgets: {b_max_hz: 10G, p_max_dbw: 10}\nn_bs: 5\n"
    )
    sc = c.scenario(3)
    assert sc.grid.size == 49
    assert sc.b_max == 1e10
    assert sc.p_max == pytest.approx(10.0)
    assert sc.n_bs == 5
    assert c.scenario(3, p_max_dbw=0.0, b_max_hz=1e9).p_max == pytest.approx(1.0)


def test_yaml_scientific_strings_coerced():
    c = cfgmod.ScenarioConfig.from_yaml("traffic: {total_bps: 1e11}\ntraining: {learning_rate: 1e-3}")
    assert c.data["traffic"]["total_bps"] == 1e11
    assert c.dinkelbach().adam.learning_rate == 1e-3


@pytest.mark.parametrize(
    "text",
    [
        "bogus: 1",
        "area: {edge: 5}",
        "n_bs: many",
        "n_bs: 2.5",
        "training: {one_shot: 3}",
        "training: {init: spiral}",
        "- just\n- a list",
        "area: [1, 2]",
        "zeta_min: true",
        "key: [unclosed",
    ],
)
def test_parse_errors(text):
    with pytest.raises(ScenarioParseError):
        c = cfgmod.ScenarioConfig.from_yaml(text)
        c.dinkelbach()


@pytest.mark.parametrize("text", ["zeta_min: 1.5", "budgets: {p_max_dbw: .nan}", "n_bs: 0"])
def test_invalid_values_surface_as_parse_errors(text):
    with pytest.raises(ScenarioParseError):
        cfgmod.ScenarioConfig.from_yaml(text).scenario(0)


def test_training_block_maps_to_config():
    c = cfgmod.ScenarioConfig.from_yaml(
        "training: {n_epoch: 50, max_iterations: 3, epsilon: 1e-3, one_shot: true, log_power_gain: 0}"
    )
    d = c.dinkelbach()
    assert d.adam.n_epoch == 50 and d.max_iterations == 3
    assert d.epsilon == 1e-3 and d.one_shot
    assert d.adam.log_power_gain == 0.0


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioParseError):
        cfgmod.load(str(tmp_path / "nope.yaml"))


def test_yaml_round_trip():
    c = cfgmod.preset("urban")
    again = cfgmod.ScenarioConfig.from_yaml(c.to_yaml())
    assert again.data == c.data


def test_traffic_file_relative_to_scenario(tmp_path):
    base = cfgmod.ScenarioConfig.from_yaml("area: {edge_m: 700, samples_per_side: 7}\nn_bs: 5")
    grid = base.grid()
    field = traffic.ScalarField(grid, np.arange(1.0, 50.0))
    traffic.save_field(field, tmp_path / "t.csv")
    (tmp_path / "s.yaml").write_text("area: {edge_m: 700, samples_per_side: 7}\nn_bs: 5\ntraffic: {file: t.csv}\n")
    sc = cfgmod.load(str(tmp_path / "s.yaml")).scenario(0)
    np.testing.assert_allclose(sc.traffic.values, field.values)


def test_fixed_traffic_seed_ignores_run_seed():
    c = cfgmod.ScenarioConfig.from_yaml("area: {edge_m: 700, samples_per_side: 7}\ntraffic: {seed: 4}")
    np.testing.assert_array_equal(c.scenario(0).traffic.values, c.scenario(9).traffic.values)
    free = cfgmod.ScenarioConfig.from_yaml("area: {edge_m: 700, samples_per_side: 7}")
    assert not np.array_equal(free.scenario(0).traffic.values, free.scenario(9).traffic.values)
    assert math.isclose(free.scenario(0).d_tot, free.scenario(9).d_tot, rel_tol=1e-9)
