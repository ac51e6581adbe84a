"""Closed-form checks: IREE bounds, the C_S/C_T optimality gap, the power
smoothness criterion and the complexity count."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import metrics
from . import propagation as prop
from .errors import InvalidInputError


def area_center(scenario: metrics.Scenario):
    x0, y0, x1, y1 = scenario.grid.area_bounds
    return np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1)])


def area_volume(scenario: metrics.Scenario) -> float:
    """Measure of the area under the capacity quadrature (m^2, or the sample count)."""
    return float(scenario.capacity_weight * scenario.grid.size)


def mean_path_loss(scenario: metrics.Scenario) -> float:
    """Quadrature mean of L(sample, area centre) over the grid."""
    loss = prop.path_loss_matrix(scenario.grid.points, area_center(scenario)[None, :], scenario.loss_defaults)
    return float(np.mean(loss))


def min_traffic_power(scenario: metrics.Scenario) -> float:
    """Transmit power a single central station needs to carry D_Tot (W)."""
    v = area_volume(scenario)
    expo = scenario.d_tot / (v * scenario.b_max)
    # 2^x - 1 without cancellation for tiny x
    return scenario.b_max * scenario.noise_psd * mean_path_loss(scenario) * math.expm1(expo * math.log(2.0))


@dataclass(frozen=True)
class IreeBounds:
    lower: float
    upper: float
    p_traffic: float
    xi_bar: float

    def to_dict(self):
        return asdict(self)


def iree_bounds(scenario: metrics.Scenario, xi_bar: float) -> IreeBounds:
    """Lower/upper IREE bounds conditional on the divergence ``xi_bar``."""
    if not (0.0 <= xi_bar <= 1.0):
        raise InvalidInputError("xi_bar must lie in [0, 1]")
    pm = scenario.power_model
    n = scenario.n_bs
    p_d = min_traffic_power(scenario)
    num = scenario.d_tot * (1.0 - xi_bar)
    lower = num / (pm.lam * scenario.p_max + n * pm.p_circuit)
    upper = num / (pm.lam * p_d + n * pm.p_circuit)
    return IreeBounds(lower, upper, p_d, float(xi_bar))


@dataclass(frozen=True)
class BoundCheck:
    applicable: bool
    passed: bool
    eta: float
    lower: float
    upper: float
    xi: float
    tol: float

    def to_dict(self):
        return asdict(self)


def check_eta(eta, xi, c_tot, scenario) -> BoundCheck:
    if c_tot < scenario.d_tot:
        return BoundCheck(False, True, eta, math.nan, math.nan, xi, math.nan)
    b = iree_bounds(scenario, xi)
    tol = 1e-6 * b.upper
    ok = b.lower - tol <= eta <= b.upper + tol
    return BoundCheck(True, bool(ok), eta, b.lower, b.upper, xi, tol)


def check_bounds(trace, scenario: metrics.Scenario) -> BoundCheck:
    """Containment of the final efficiency in the bounds at the achieved divergence.

    Not applicable (and reported as passing) when the final capacity falls
    short of the traffic total.
    """
    if not trace.records:
        raise InvalidInputError("empty trace")
    last = trace.records[-1]
    return check_eta(last.eta_next, last.report.xi, last.report.c_tot, scenario)


@dataclass(frozen=True)
class GapReport:
    bound: float
    measured: float
    eta_s: float
    eta_t: float
    xi_s: float
    xi_t: float
    xi_st: float
    c_tot_s: float
    c_tot_t: float
    branch: str
    metric_bound: float = math.nan

    @property
    def holds(self):
        return self.measured <= self.bound

    @property
    def metric_holds(self):
        return self.measured <= self.metric_bound

    def to_dict(self):
        d = asdict(self)
        d["holds"] = self.holds
        d["metric_holds"] = self.metric_holds
        return d


def gap_bound_value(xi_s, xi_st, c_s, c_t, d_tot, p_t):
    if c_s > d_tot:
        return d_tot * xi_st / p_t
    num = (1.0 - xi_s) * (c_t - c_s) + xi_st * c_t
    return num / ((1.0 - xi_s + xi_st) * p_t)


def metric_gap_bound(xi_s, xi_st, c_s, c_t, d_tot, p_t):
    """Gap bound from the triangle inequality of sqrt(JS), which is a metric.

    |xi_T - xi_S| <= sqrt(xi_ST) (2 sqrt(xi_S) + sqrt(xi_ST)), and the exact
    capacity never falls below the lower bound, so min(C_T, D) >= min(C_S, D).
    """
    r = math.sqrt(xi_st)
    dxi = r * (2.0 * math.sqrt(xi_s) + r)
    m_s, m_t = min(c_s, d_tot), min(c_t, d_tot)
    return (max(m_t - m_s, 0.0) + m_s * dxi) / p_t


def optimality_gap(design: prop.NetworkDesign, scenario: metrics.Scenario, shadow=None) -> GapReport:
    """Gap bound between the lower-bound and exact capacity models, with the measured gap."""
    c_s = metrics.capacity_field(design, scenario, "lower", shadow)
    c_t = metrics.capacity_field(design, scenario, "exact", shadow)
    d = scenario.traffic
    xi_s = metrics.js_divergence(c_s, d)
    xi_t = metrics.js_divergence(c_t, d)
    xi_st = metrics.js_divergence(c_s, c_t)
    cs_tot, ct_tot = metrics.total(c_s), metrics.total(c_t)
    p_t = metrics.power_total(design, scenario.power_model)
    d_tot = scenario.d_tot
    eta_s = min(cs_tot, d_tot) * (1.0 - xi_s) / p_t
    eta_t = min(ct_tot, d_tot) * (1.0 - xi_t) / p_t
    bound = gap_bound_value(xi_s, xi_st, cs_tot, ct_tot, d_tot, p_t)
    return GapReport(
        bound, abs(eta_t - eta_s), eta_s, eta_t, xi_s, xi_t, xi_st, cs_tot, ct_tot,
        "capacity_exceeds" if cs_tot > d_tot else "capacity_short",
        metric_gap_bound(xi_s, xi_st, cs_tot, ct_tot, d_tot, p_t),
    )


def optimality_gap_bound(design, scenario) -> float:
    return optimality_gap(design, scenario).bound


@dataclass(frozen=True)
class SmoothnessCheck:
    satisfied: bool
    margin: float
    lhs: float
    rhs: float


def smoothness_criterion(design: prop.NetworkDesign, loc, l0, l1, scenario: metrics.Scenario) -> SmoothnessCheck:
    """Power-direction (L0, L1) smoothness test of the capacity at sample ``loc``."""
    if not (l0 >= 0.0 and l1 >= 0.0):
        raise InvalidInputError("l0 and l1 must be non-negative")
    pt = np.asarray(loc, dtype=float).reshape(1, 2)
    lam = scenario.b_max * scenario.noise_psd * prop.path_loss_matrix(pt, design.locations, scenario.loss_defaults)[0]
    lhs = float(np.sum(lam))
    b = design.bandwidths
    denom = np.sqrt((b * l1) ** 2 + 4.0 * math.log(2.0) * l0) + b * l1
    with np.errstate(divide="ignore"):
        terms = np.where(denom > 0.0, 2.0 * b / denom, math.inf)
    rhs = float(np.sum(terms)) - scenario.p_max
    margin = lhs - rhs
    return SmoothnessCheck(bool(margin >= 0.0), margin, lhs, rhs)


def complexity_estimate(scenario: metrics.Scenario, config=None, n_iterations=None, n_epoch=None) -> int:
    """n_epoch * N_ite * (N^2 + M N) from the run configuration or explicit counts."""
    if n_epoch is None:
        n_epoch = config.adam.n_epoch
    if n_iterations is None:
        n_iterations = config.max_iterations
    n, m = scenario.n_bs, scenario.grid.size
    return int(n_epoch) * int(n_iterations) * (n * n + m * n)


def analysis_block(result, scenario, config) -> dict:
    """Everything the run report carries under ``analysis``."""
    trace = result.trace
    out = {
        "bounds": check_bounds(trace, scenario).to_dict() if trace.records else None,
        "gap": optimality_gap(result.design, scenario).to_dict(),
        "complexity": {
            "predicted": complexity_estimate(scenario, config, n_iterations=len(trace.records)),
            "loss_evaluations": trace.evaluations,
        },
    }
    return out
