"""Scalar figures of merit for a design on a scenario."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property

import numpy as np

from . import propagation as prop
from .errors import InvalidInputError, UndefinedDivergenceError
from .traffic import SampleGrid, ScalarField

PROB_FLOOR = 1e-300
CAPACITY_MEASURES = ("sample", "area")


@dataclass(frozen=True)
class PowerModel:
    """Per-station consumption ``lam * P_tx + p_circuit``."""

    lam: float = 1.0 / 0.38
    p_circuit: float = 5.0

    def __post_init__(self):
        if not (self.lam >= 1.0 and math.isfinite(self.lam)):
            raise InvalidInputError("lam must be >= 1")
        if not (self.p_circuit >= 0.0 and math.isfinite(self.p_circuit)):
            raise InvalidInputError("p_circuit must be >= 0")

    @classmethod
    def from_efficiency(cls, pa_efficiency, p_circuit):
        return cls(1.0 / pa_efficiency, p_circuit)


@dataclass(frozen=True, eq=False)
class Scenario:
    grid: SampleGrid
    traffic: ScalarField
    b_max: float
    p_max: float
    zeta_min: float = 0.8
    noise_psd: float = 10.0 ** (-20.4)
    power_model: PowerModel = field(default_factory=PowerModel)
    n_bs: int = 25
    loss_defaults: prop.PathLossParams = field(default_factory=prop.PathLossParams)
    # "sample": each sample's rate serves its cell, so C_Tot = sum of rates;
    # "area": rates are integrated over the area like a density
    capacity_measure: str = "area"

    def __post_init__(self):
        if self.capacity_measure not in CAPACITY_MEASURES:
            raise InvalidInputError(f"capacity_measure must be one of {CAPACITY_MEASURES}")
        if self.traffic.grid is not self.grid:
            raise InvalidInputError("traffic field must live on the scenario grid")
        for name in ("b_max", "p_max", "noise_psd"):
            v = getattr(self, name)
            if not (v > 0.0 and math.isfinite(v)):
                raise InvalidInputError(f"{name} must be positive")
        if not 0.0 <= self.zeta_min <= 1.0:
            raise InvalidInputError("zeta_min must lie in [0, 1]")
        if int(self.n_bs) != self.n_bs or self.n_bs < 1:
            raise InvalidInputError("n_bs must be a positive integer")

    @cached_property
    def d_tot(self):
        return total(self.traffic)

    @property
    def capacity_weight(self):
        """Weight of one sample's rate in C_Tot."""
        return 1.0 if self.capacity_measure == "sample" else float(self.grid.weight)

    def with_budgets(self, b_max=None, p_max=None):
        return replace(
            self,
            b_max=self.b_max if b_max is None else b_max,
            p_max=self.p_max if p_max is None else p_max,
        )

    def with_traffic(self, traffic):
        return replace(self, traffic=traffic)


@dataclass(frozen=True)
class MetricReport:
    c_tot: float
    d_tot: float
    xi: float
    zeta: float
    p_t: float
    iree: float
    ee: float
    se: float

    def to_dict(self):
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})


def total(field: ScalarField) -> float:
    """Quadrature integral of a density field (bit/s)."""
    return float(np.sum(field.values) * field.grid.weight)


def _values(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def js_divergence_values(c, d, weight=1.0) -> float:
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    c_tot = np.sum(c) * weight
    d_tot = np.sum(d) * weight
    if not (c_tot > 0.0 and d_tot > 0.0):
        raise UndefinedDivergenceError("JS divergence needs two fields with positive totals")
    p = c * weight / c_tot
    q = d * weight / d_tot
    m = 0.5 * (p + q)
    tp = np.where(p > 0.0, p * np.log2(np.maximum(p, PROB_FLOOR) / np.maximum(m, PROB_FLOOR)), 0.0)
    tq = np.where(q > 0.0, q * np.log2(np.maximum(q, PROB_FLOOR) / np.maximum(m, PROB_FLOOR)), 0.0)
    xi = 0.5 * (np.sum(tp) + np.sum(tq))
    return float(min(max(xi, 0.0), 1.0))


def js_divergence(c: ScalarField, d: ScalarField) -> float:
    """Base-2 Jensen-Shannon divergence between the normalised fields."""
    if isinstance(c, ScalarField) and isinstance(d, ScalarField):
        if c.grid.size != d.grid.size:
            raise InvalidInputError("fields live on different grids")
        return js_divergence_values(c.values, d.values, c.grid.weight)
    return js_divergence_values(_values(c), _values(d))


def power_total(design: prop.NetworkDesign, model: PowerModel) -> float:
    return float(sum(model.lam * s.tx_power + model.p_circuit for s in design.stations))


def _utility(c_tot, d_tot, xi):
    return min(c_tot, d_tot) * (1.0 - xi)


def iree(c_field, d_field, design, scenario) -> float:
    c_tot, d_tot = total(c_field), total(d_field)
    xi = js_divergence(c_field, d_field)
    return _utility(c_tot, d_tot, xi) / power_total(design, scenario.power_model)


def zeta_from(c_tot, d_tot, xi):
    # exact 1 - xi once capacity covers traffic
    if c_tot >= d_tot:
        return 1.0 - xi
    return c_tot * (1.0 - xi) / d_tot


def utility_indicator(c_field, d_field, scenario=None) -> float:
    c_tot, d_tot = total(c_field), total(d_field)
    xi = js_divergence(c_field, d_field)
    return zeta_from(c_tot, d_tot, xi)


def capacity_field(design, scenario, kind="lower", shadow=None) -> ScalarField:
    """Capacity density on the scenario grid; ``kind`` is "lower" or "exact".

    Rates (bit/s at each sample) are converted to densities so that
    ``total`` returns C_Tot under the scenario's capacity measure.
    """
    pts = scenario.grid.points
    if kind == "lower":
        vals = prop.capacity_lower_bound_field(pts, design, scenario.b_max, scenario.noise_psd, shadow)
    elif kind == "exact":
        vals = prop.capacity_exact_field(pts, design, scenario.b_max, scenario.noise_psd, shadow)
    else:
        raise InvalidInputError(f"unknown capacity kind {kind!r}")
    if scenario.capacity_measure == "sample":
        vals = vals / scenario.grid.weight
    return ScalarField(scenario.grid, vals)


def given_iree_utility(design, scenario, eta, kind="lower") -> float:
    """min{C,D}(1 - xi) - eta * P_T, the parametric Dinkelbach objective."""
    c = capacity_field(design, scenario, kind)
    xi = js_divergence(c, scenario.traffic)
    return _utility(total(c), scenario.d_tot, xi) - eta * power_total(design, scenario.power_model)


@dataclass(frozen=True)
class Residuals:
    zeta: float
    bandwidth: float
    power: float

    def __iter__(self):
        return iter((self.zeta, self.bandwidth, self.power))

    def to_dict(self):
        return asdict(self)


def feasibility_residual(design, scenario, kind="lower", with_zeta=True) -> Residuals:
    """Constraint violations (zeta shortfall, excess Hz, excess W); all >= 0.

    ``with_zeta=False`` skips the utility floor, which also lets budget-only
    objectives run on traffic maps where the divergence is undefined.
    """
    short = 0.0
    if with_zeta:
        c = capacity_field(design, scenario, kind)
        short = max(scenario.zeta_min - utility_indicator(c, scenario.traffic), 0.0)
    return Residuals(
        short,
        max(float(np.sum(design.bandwidths)) - scenario.b_max, 0.0),
        max(float(np.sum(design.powers)) - scenario.p_max, 0.0),
    )


def report_from_fields(c_field, d_field, design, scenario) -> MetricReport:
    c_tot, d_tot = total(c_field), total(d_field)
    if c_tot > 0.0 and d_tot > 0.0:
        xi = js_divergence(c_field, d_field)
        zeta = zeta_from(c_tot, d_tot, xi)
    else:
        xi, zeta = float("nan"), float("nan")
    p_t = power_total(design, scenario.power_model)
    util = _utility(c_tot, d_tot, xi) if d_tot > 0.0 else 0.0
    return MetricReport(
        c_tot=c_tot,
        d_tot=d_tot,
        xi=xi,
        zeta=zeta,
        p_t=p_t,
        iree=util / p_t,
        ee=c_tot / p_t,
        se=c_tot / scenario.b_max,
    )


def evaluate(design, scenario, kind="lower", shadow=None) -> MetricReport:
    """MetricReport of ``design``; ``kind`` picks the capacity model."""
    return report_from_fields(capacity_field(design, scenario, kind, shadow), scenario.traffic, design, scenario)
