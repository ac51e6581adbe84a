"""Training loss, its analytic gradient and finite-difference oracles.

Parameters travel as a flat vector ``[x1, y1, ..., xN, yN, B1..BN, P1..PN]``
in physical units.  The loss itself is reported in scaled units: capacity and
traffic are divided by a reference rate ``K`` (the traffic total for the IREE
objective) so every term is O(1).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .metrics import Scenario, total
from .propagation import NetworkDesign

B_FLOOR = 1.0
P_FLOOR = 1e-9
KINK_TOL = 1e-6


class ObjectiveKind(enum.Enum):
    IREE = "iree"
    EE = "ee"
    SE = "se"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidInputError(f"unknown objective {value!r}") from None


@dataclass(frozen=True)
class ParamLayout:
    n_bs: int

    @property
    def size(self):
        return 4 * self.n_bs

    @property
    def loc(self):
        return slice(0, 2 * self.n_bs)

    @property
    def bw(self):
        return slice(2 * self.n_bs, 3 * self.n_bs)

    @property
    def pw(self):
        return slice(3 * self.n_bs, 4 * self.n_bs)

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise InvalidInputError(f"expected {self.size} parameters, got shape {theta.shape}")
        return theta[self.loc].reshape(-1, 2), theta[self.bw], theta[self.pw]

    def join(self, locations, bandwidths, powers):
        return np.concatenate([np.asarray(locations, float).reshape(-1), bandwidths, powers]).astype(float)

    def scales(self, scenario: Scenario):
        """Per-coordinate scale mapping physical units to O(1) optimizer units."""
        s = np.empty(self.size)
        s[self.loc] = math.sqrt(scenario.grid.weight)
        s[self.bw] = scenario.b_max
        s[self.pw] = scenario.p_max
        return s


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    @classmethod
    def from_design(cls, design: NetworkDesign):
        layout = ParamLayout(len(design))
        return cls(layout.join(design.locations, design.bandwidths, design.powers), layout)

    def to_design(self, loss=None) -> NetworkDesign:
        loc, bw, pw = self.layout.split(self.values)
        return NetworkDesign.from_arrays(loc, bw, pw, loss)

    def apply_floors(self):
        v = self.values.copy()
        v[self.layout.bw] = np.maximum(v[self.layout.bw], B_FLOOR)
        v[self.layout.pw] = np.maximum(v[self.layout.pw], P_FLOOR)
        return ParamVector(v, self.layout)


@dataclass(frozen=True)
class LossBreakdown:
    utility_term: float
    power_term: float
    penalty_term: float
    c_tot: float = math.nan
    xi: float = math.nan
    zeta: float = math.nan

    @property
    def total(self):
        return self.utility_term + self.power_term + self.penalty_term


class LossModel:
    """Binds a scenario and objective to the fused kernel."""

    def __init__(self, scenario: Scenario, objective=ObjectiveKind.IREE, k_scale=None, backend=None):
        self.scenario = scenario
        self.objective = ObjectiveKind.parse(objective)
        self.backend = backend
        d_tot = total(scenario.traffic)
        if k_scale is None:
            if self.objective is not ObjectiveKind.IREE:
                raise InvalidInputError("EE/SE objectives need an explicit reference rate k_scale")
            k_scale = d_tot
        if not (k_scale > 0.0 and math.isfinite(k_scale)):
            raise InvalidInputError("k_scale must be positive; IREE needs non-zero traffic")
        self.k_scale = float(k_scale)
        self.d_tot = d_tot
        self.kind = kernels.KIND_MATCH if self.objective is ObjectiveKind.IREE else kernels.KIND_CAPACITY
        self.zeta_flag = self.objective is ObjectiveKind.IREE
        loss = scenario.loss_defaults
        self._static = dict(
            pts=np.ascontiguousarray(scenario.grid.points),
            w=float(scenario.grid.weight),
            wc=float(scenario.capacity_weight),
            d=np.ascontiguousarray(scenario.traffic.values),
            shape=loss.shape_matrix,
            height_sq=float(loss.height_sq),
            alpha=float(loss.alpha),
            gamma=float(loss.gamma),
            beta=float(loss.beta),
            b_noise=float(scenario.b_max * scenario.noise_psd),
            lam=float(scenario.power_model.lam),
            p_circuit=float(scenario.power_model.p_circuit),
        )

    def _call(self, theta, eta, omega, want_grad):
        theta = np.asarray(getattr(theta, "values", theta), dtype=float)
        if theta.ndim != 1 or theta.size % 4:
            raise InvalidInputError("parameter vector length must be a multiple of 4")
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("non-finite parameter")
        if not (math.isfinite(eta) and math.isfinite(omega) and omega >= 0.0):
            raise InvalidInputError("eta must be finite and omega finite and non-negative")
        layout = ParamLayout(theta.size // 4)
        loc, bw, pw = layout.split(theta)
        s = self._static
        sc = self.scenario
        return kernels.loss_grad(
            np.ascontiguousarray(loc), np.ascontiguousarray(bw), np.ascontiguousarray(pw),
            s["pts"], s["w"], s["wc"], s["d"], self.d_tot if self.d_tot > 0 else 1.0, s["shape"], s["height_sq"],
            s["alpha"], s["gamma"], s["beta"], s["b_noise"], s["lam"], s["p_circuit"],
            float(eta), float(omega), self.k_scale, float(sc.zeta_min), int(self.zeta_flag),
            self.kind, float(sc.b_max), float(sc.p_max), bool(want_grad),
            backend_name=self.backend,
        )

    @staticmethod
    def _breakdown(out):
        return LossBreakdown(
            float(out[kernels.OUT_UTILITY]),
            float(out[kernels.OUT_POWER]),
            float(out[kernels.OUT_PENALTY]),
            float(out[kernels.OUT_C_TOT]),
            float(out[kernels.OUT_XI]),
            float(out[kernels.OUT_ZETA]),
        )

    def loss(self, theta, eta, omega) -> LossBreakdown:
        out, _ = self._call(theta, eta, omega, False)
        return self._breakdown(out)

    def loss_and_grad(self, theta, eta, omega):
        out, grad = self._call(theta, eta, omega, True)
        return self._breakdown(out), grad

    def grad(self, theta, eta, omega):
        return self._call(theta, eta, omega, True)[1]

    def value(self, theta, eta, omega):
        return self.loss(theta, eta, omega).total

    def kink_gaps(self, theta, omega):
        """Signed distances to each non-smooth switch, relative to their scale."""
        b = self.loss(theta, 0.0, omega)
        theta = np.asarray(getattr(theta, "values", theta), dtype=float)
        layout = ParamLayout(theta.size // 4)
        sc = self.scenario
        gaps = [
            float(np.sum(theta[layout.bw])) / sc.b_max - 1.0,
            float(np.sum(theta[layout.pw])) / sc.p_max - 1.0,
        ]
        if self.kind == kernels.KIND_MATCH:
            gaps.append((b.c_tot - self.d_tot) / self.d_tot)
            gaps.append(sc.zeta_min - b.zeta)
        return np.array(gaps)


def loss(params, eta, omega, scenario, objective=ObjectiveKind.IREE, k_scale=None) -> LossBreakdown:
    return LossModel(scenario, objective, k_scale).loss(params, eta, omega)


def grad_loss(params, eta, omega, scenario, objective=ObjectiveKind.IREE, k_scale=None):
    """Analytic gradient of ``loss(...).total`` in physical units."""
    return LossModel(scenario, objective, k_scale).grad(params, eta, omega)


def fd_steps(theta, rel=1e-4):
    theta = np.asarray(getattr(theta, "values", theta), dtype=float)
    return rel * (1.0 + np.abs(theta))


def finite_diff_grad(params, eta, omega, scenario, step=None, objective=ObjectiveKind.IREE, k_scale=None):
    """Central differences of the scaled loss; ``step`` defaults to 1e-4 (1 + |theta|)."""
    return _fd_model(LossModel(scenario, objective, k_scale), params, eta, omega, step)


def _fd_model(model, params, eta, omega, step=None):
    theta = np.array(getattr(params, "values", params), dtype=float)
    h = fd_steps(theta) if step is None else np.broadcast_to(np.asarray(step, float), theta.shape)
    g = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        g[i] = (model.value(up, eta, omega) - model.value(dn, eta, omega)) / (2.0 * h[i])
    return g


def relative_errors(analytic, numeric, floor_rel=1e-8):
    """Coordinate-wise |a - f| / max(|a|, |f|, floor_rel * max|g|)."""
    a = np.asarray(analytic, dtype=float)
    f = np.asarray(numeric, dtype=float)
    big = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(f), initial=0.0)), 1e-300)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor_rel * big)


@dataclass(frozen=True)
class GradientCheck:
    max_rel_error: float
    worst_index: int
    n_checked: int
    n_excluded: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def gradient_check(model: LossModel, theta, eta, omega, rel_step=1e-6, tol=1e-5, grad_fn=None) -> GradientCheck:
    """Analytic gradient against central differences, skipping kink-adjacent coordinates.

    ``grad_fn(theta, eta, omega)`` replaces the analytic gradient (used to
    exercise the checker itself).
    """
    theta = np.array(getattr(theta, "values", theta), dtype=float)
    step = fd_steps(theta, rel_step)
    analytic = (grad_fn or model.grad)(theta, eta, omega)
    numeric = _fd_model(model, theta, eta, omega, step)
    skip = near_kink(model, theta, omega, step)
    err = np.where(skip, 0.0, relative_errors(analytic, numeric))
    worst = int(np.argmax(err)) if err.size else -1
    return GradientCheck(float(err.max(initial=0.0)), worst, int((~skip).sum()), int(skip.sum()), tol)


def near_kink(model: LossModel, theta, omega, step=None, tol=KINK_TOL):
    """Boolean mask of coordinates whose difference stencil touches a kink."""
    theta = np.array(getattr(theta, "values", theta), dtype=float)
    h = fd_steps(theta) if step is None else np.broadcast_to(np.asarray(step, float), theta.shape)
    base = model.kink_gaps(theta, omega)
    mask = np.zeros(theta.size, dtype=bool)
    if np.any(np.abs(base) <= tol):
        mask[:] = True
        return mask
    for i in range(theta.size):
        for sgn in (-1.0, 1.0):
            probe = theta.copy()
            probe[i] += sgn * h[i]
            gaps = model.kink_gaps(probe, omega)
            if np.any(np.sign(gaps) != np.sign(base)) or np.any(np.abs(gaps) <= tol):
                mask[i] = True
    return mask


def power_gradient_norm(params, eta, omega, scenario, objective=ObjectiveKind.IREE, k_scale=None):
    """|dL/dP~| with P~ = P / P_max."""
    model = LossModel(scenario, objective, k_scale)
    theta = np.asarray(getattr(params, "values", params), dtype=float)
    g = model.grad(theta, eta, omega)
    return float(np.linalg.norm(g[ParamLayout(theta.size // 4).pw] * scenario.p_max))


def second_order_norm(params, eta, omega, scenario, objective=ObjectiveKind.IREE, k_scale=None, rel=1e-4):
    """Norm of the diagonal of d2L/dP~^2 from central differences of the gradient."""
    model = LossModel(scenario, objective, k_scale)
    return _second_order_norm(model, params, eta, omega, rel)


def _second_order_norm(model, params, eta, omega, rel=1e-4):
    theta = np.array(getattr(params, "values", params), dtype=float)
    layout = ParamLayout(theta.size // 4)
    p_max = model.scenario.p_max
    idx = np.arange(theta.size)[layout.pw]
    diag = np.empty(idx.size)
    for j, i in enumerate(idx):
        # step relative to the power itself so the lower probe stays positive
        h = rel * max(abs(theta[i]), P_FLOOR)
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        g_up = model.grad(up, eta, omega)[i] * p_max
        g_dn = model.grad(dn, eta, omega)[i] * p_max
        diag[j] = (g_up - g_dn) * p_max / (2.0 * h)
    return float(np.linalg.norm(diag))
