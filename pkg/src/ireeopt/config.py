"""Scenario files: YAML documents mirroring :class:`metrics.Scenario`.

Schema (every key optional, defaults are the shipped rural preset)::

    name: rural
    area: {edge_m: 5000, samples_per_side: 36}
    traffic:
      total_bps: 8.9e12
      location: 19        # mean of the log-density
      scale: 2.8          # std of the log-density
      spread: 0.0012      # 1/m^2, inverse squared correlation length
      seed: null          # null: use the run seed
      file: null          # CSV from gen-traffic, overrides the generator
    budgets: {b_max_hz: 36e9, p_max_dbw: 30}
    n_bs: 25
    zeta_min: 0.8
    noise_psd_dbm_hz: -174
    power_model: {pa_efficiency: 0.38, p_circuit_w: 5}
    path_loss: {intercept_db: 35, slope_db: 38, beta: null, height_m: 0}
    capacity_measure: area
    shadowing_db: 4
    training:
      n_epoch: 2000
      learning_rate: 1.0e-3
      max_iterations: 30
      epsilon: 1.0e-4
      omega_stage2: 100
      stage1_fraction: 0.7
      plateau_window: 200
      plateau_rtol: 1.0e-6
      one_shot: false
      init: traffic
      log_power_gain: 20  # 0: linear power steps
"""

from __future__ import annotations

import copy
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources

import yaml

from . import metrics
from . import propagation as prop
from . import traffic as tr
from .dinkelbach import DinkelbachConfig
from .errors import IREEError, ScenarioParseError
from .trainer import INIT_MODES, AdamConfig, StageSchedule

PRESETS = ("rural", "urban")

_DEFAULTS = {
    "name": "rural",
    "area": {"edge_m": 5000.0, "samples_per_side": 36},
    "traffic": {
        "total_bps": 8.9e12,
        "location": 19.0,
        "scale": 2.8,
        "spread": 0.0012,
        "seed": None,
        "file": None,
    },
    "budgets": {"b_max_hz": 36e9, "p_max_dbw": 30.0},
    "n_bs": 25,
    "zeta_min": 0.8,
    "noise_psd_dbm_hz": -174.0,
    "power_model": {"pa_efficiency": 0.38, "p_circuit_w": 5.0},
    "path_loss": {"intercept_db": 35.0, "slope_db": 38.0, "beta": None, "height_m": 0.0},
    "capacity_measure": "area",
    "shadowing_db": 4.0,
    "training": {
        "n_epoch": 2000,
        "learning_rate": 1e-3,
        "max_iterations": 30,
        "epsilon": 1e-4,
        "omega_stage2": 100.0,
        "stage1_fraction": 0.7,
        "plateau_window": 200,
        "plateau_rtol": 1e-6,
        "one_shot": False,
        "init": "traffic",
        "log_power_gain": 20.0,
    },
}

_INT_KEYS = {"samples_per_side", "n_bs", "n_epoch", "max_iterations", "plateau_window", "seed"}
_STR_KEYS = {"name", "capacity_measure", "init", "file"}
_BOOL_KEYS = {"one_shot"}

_SI = {"": 1.0, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12}
_HZ_RE = re.compile(r"^\s*([0-9.eE+-]+)\s*([kMGT]?)(?:Hz)?\s*$")


def parse_hz(text) -> float:
    """``"36G"``, ``"36GHz"``, ``"3.6e10"`` -> 3.6e10."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    m = _HZ_RE.match(str(text))
    if not m:
        raise ScenarioParseError(f"cannot parse bandwidth {text!r}")
    try:
        return float(m.group(1)) * _SI[m.group(2)]
    except ValueError:
        raise ScenarioParseError(f"cannot parse bandwidth {text!r}") from None


def _coerce(key, value, path):
    if value is None:
        return None
    if key in _STR_KEYS:
        return str(value)
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ScenarioParseError(f"{path}: expected true/false")
        return value
    if isinstance(value, bool):
        raise ScenarioParseError(f"{path}: expected a number")
    try:
        # YAML reads "36e9" as a string; float() accepts it
        num = float(value)
    except (TypeError, ValueError):
        raise ScenarioParseError(f"{path}: expected a number, got {value!r}") from None
    if key in _INT_KEYS:
        if num != int(num):
            raise ScenarioParseError(f"{path}: expected an integer")
        return int(num)
    return num


def _merge(base, override, path=""):
    if not isinstance(override, dict):
        raise ScenarioParseError(f"{path or 'document'}: expected a mapping")
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ScenarioParseError(f"unknown key {where}")
        if isinstance(base[key], dict):
            out[key] = _merge(base[key], value if value is not None else {}, where)
        elif key == "b_max_hz":
            out[key] = parse_hz(value)
        else:
            out[key] = _coerce(key, value, where)
    return out


@dataclass
class ScenarioConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(_DEFAULTS))
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc, base_dir="."):
        return cls(_merge(_DEFAULTS, doc or {}), base_dir)

    @classmethod
    def from_yaml(cls, text, base_dir="."):
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioParseError(f"invalid YAML: {exc}") from None
        return cls.from_dict(doc, base_dir)

    @classmethod
    def load(cls, path):
        """Read a scenario file; a bare preset name loads the shipped preset."""
        if path in PRESETS and not os.path.exists(path):
            return preset(path)
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ScenarioParseError(f"{path}: {exc.strerror}") from None
        return cls.from_yaml(text, os.path.dirname(os.path.abspath(path)))

    def to_yaml(self):
        return yaml.safe_dump(self.data, sort_keys=False)

    @property
    def name(self):
        return self.data["name"]

    @property
    def shadowing_db(self):
        return self.data["shadowing_db"]

    @property
    def init(self):
        return self.data["training"]["init"]

    def grid(self):
        a = self.data["area"]
        return tr.make_grid(a["edge_m"], a["samples_per_side"])

    def traffic(self, grid, seed):
        t = self.data["traffic"]
        if t["file"]:
            path = t["file"] if os.path.isabs(t["file"]) else os.path.join(self.base_dir, t["file"])
            return tr.load_field(path, grid)
        s = seed if t["seed"] is None else t["seed"]
        return tr.lognormal_traffic(grid, t["location"], t["scale"], t["spread"], t["total_bps"], seed=int(s))

    def scenario(self, seed=0, p_max_dbw=None, b_max_hz=None) -> metrics.Scenario:
        d = self.data
        try:
            grid = self.grid()
            pl = d["path_loss"]
            loss = prop.PathLossParams.from_db(pl["intercept_db"], pl["slope_db"], pl["beta"], height=pl["height_m"])
            pm = d["power_model"]
            budgets = d["budgets"]
            return metrics.Scenario(
                grid=grid,
                traffic=self.traffic(grid, seed),
                b_max=float(budgets["b_max_hz"] if b_max_hz is None else b_max_hz),
                p_max=10.0 ** ((budgets["p_max_dbw"] if p_max_dbw is None else p_max_dbw) / 10.0),
                zeta_min=d["zeta_min"],
                noise_psd=10.0 ** ((d["noise_psd_dbm_hz"] - 30.0) / 10.0),
                power_model=metrics.PowerModel.from_efficiency(pm["pa_efficiency"], pm["p_circuit_w"]),
                n_bs=d["n_bs"],
                loss_defaults=loss,
                capacity_measure=d["capacity_measure"],
            )
        except ScenarioParseError:
            raise
        except (IREEError, ZeroDivisionError, TypeError) as exc:
            raise ScenarioParseError(f"invalid scenario: {exc}") from exc

    def dinkelbach(self) -> DinkelbachConfig:
        t = self.data["training"]
        if t["init"] not in INIT_MODES:
            raise ScenarioParseError(f"training.init must be one of {INIT_MODES}")
        try:
            return DinkelbachConfig(
                epsilon=t["epsilon"],
                max_iterations=t["max_iterations"],
                adam=AdamConfig(
                    learning_rate=t["learning_rate"], n_epoch=t["n_epoch"], log_power_gain=t["log_power_gain"]
                ),
                schedule=StageSchedule(
                    omega_stage2=t["omega_stage2"],
                    stage1_fraction=t["stage1_fraction"],
                    plateau_window=t["plateau_window"],
                    plateau_rtol=t["plateau_rtol"],
                ),
                one_shot=t["one_shot"],
            )
        except IREEError as exc:
            raise ScenarioParseError(f"invalid training block: {exc}") from exc


def preset(name) -> ScenarioConfig:
    if name not in PRESETS:
        raise ScenarioParseError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("ireeopt").joinpath("data", f"{name}.yaml").read_text()
    return ScenarioConfig.from_yaml(text)


def load(path) -> ScenarioConfig:
    return ScenarioConfig.load(path)


def dbm_hz_to_w_hz(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def w_hz_to_dbm_hz(w):
    return 10.0 * math.log10(w) + 30.0
