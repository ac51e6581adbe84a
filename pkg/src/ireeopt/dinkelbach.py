"""Dinkelbach outer loop around the two-stage RBF training."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import InvalidInputError, TrainingAbortedError
from .gradients import LossModel, ObjectiveKind, ParamLayout
from .propagation import NetworkDesign
from .trainer import (
    AdamConfig,
    StageSchedule,
    TrainerState,
    initial_state,
    is_feasible,
    one_shot_train,
    two_stage_train,
)

MONOTONE_RTOL = 1e-6


@dataclass(frozen=True)
class DinkelbachConfig:
    epsilon: float = 1e-4
    max_iterations: int = 30
    adam: AdamConfig = field(default_factory=AdamConfig)
    schedule: StageSchedule = field(default_factory=StageSchedule)
    one_shot: bool = False

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise InvalidInputError("epsilon must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be a positive integer")


@dataclass
class IterationRecord:
    k: int
    eta: float
    eta_next: float
    loss: float
    objective: float
    residuals: metrics.Residuals
    report: metrics.MetricReport
    params: np.ndarray
    feasible: bool
    stage1_epochs: int
    evaluations: int

    def to_dict(self):
        lay = ParamLayout(self.params.size // 4)
        loc, bw, pw = lay.split(self.params)
        return {
            "k": self.k,
            "eta": self.eta,
            "eta_next": self.eta_next,
            "loss": self.loss,
            "objective": self.objective,
            "residuals": self.residuals.to_dict(),
            "report": self.report.to_dict(),
            "feasible": self.feasible,
            "stage1_epochs": self.stage1_epochs,
            "evaluations": self.evaluations,
            "params": {
                "locations_m": loc.tolist(),
                "bandwidths_hz": bw.tolist(),
                "powers_w": pw.tolist(),
            },
        }


@dataclass
class DinkelbachTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    monotonicity_violations: int = 0
    train_rows: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)

    @property
    def etas(self):
        """eta^(1), ..., eta^(K+1): the initial value followed by every update."""
        if not self.records:
            return []
        return [self.records[0].eta] + [r.eta_next for r in self.records]

    @property
    def evaluations(self):
        return sum(r.evaluations for r in self.records)

    def to_jsonl(self):
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


@dataclass
class DinkelbachResult:
    design: NetworkDesign
    eta: float
    trace: DinkelbachTrace
    feasible: bool
    scale: float

    @property
    def converged(self):
        return self.trace.converged


def update_iree(design: NetworkDesign, scenario: metrics.Scenario) -> float:
    """Next Dinkelbach parameter: the IREE of ``design`` on the lower-bound capacity."""
    c = metrics.capacity_field(design, scenario)
    return metrics.iree(c, scenario.traffic, design, scenario)


def update_ee(design: NetworkDesign, scenario: metrics.Scenario) -> float:
    c = metrics.capacity_field(design, scenario)
    return metrics.total(c) / metrics.power_total(design, scenario.power_model)


def optimal_condition_residual(design: NetworkDesign, scenario: metrics.Scenario, eta: float) -> float:
    """F(eta) = min(C, D)(1 - xi) - eta P_T at ``design`` (unscaled, bit/s)."""
    return metrics.given_iree_utility(design, scenario, eta)


def ee_condition_residual(design, scenario, eta):
    c = metrics.capacity_field(design, scenario)
    return metrics.total(c) - eta * metrics.power_total(design, scenario.power_model)


def reference_rate(design: NetworkDesign, scenario: metrics.Scenario) -> float:
    """Capacity total used to scale capacity-only objectives."""
    return metrics.total(metrics.capacity_field(design, scenario))


def run_dinkelbach(
    scenario: metrics.Scenario,
    config: DinkelbachConfig,
    state: TrainerState,
    objective=ObjectiveKind.IREE,
    k_scale=None,
    frozen=None,
    g2_every=0,
    keep_trajectory=0,
    log=None,
) -> DinkelbachResult:
    """Algorithm loop from an explicit starting state."""
    objective = ObjectiveKind.parse(objective)
    if objective is ObjectiveKind.SE:
        raise InvalidInputError("SE has no ratio form; use baselines.maximize_se")
    loss_params = scenario.loss_defaults
    design = state.design(loss_params)
    if objective is ObjectiveKind.IREE:
        update = update_iree
    else:
        update = update_ee
        if k_scale is None:
            k_scale = reference_rate(design, scenario)
    model = LossModel(scenario, objective, k_scale)
    trace = DinkelbachTrace()
    eta = update(design, scenario)
    # the starting design scores exactly zero at eta^(1), so it is admissible
    incumbent = state
    with_zeta = objective is ObjectiveKind.IREE
    feasible = is_feasible(metrics.feasibility_residual(design, scenario, with_zeta=with_zeta), scenario, zeta_checked=with_zeta)
    for k in range(1, config.max_iterations + 1):
        offset = (k - 1) * config.adam.n_epoch
        try:
            if config.one_shot:
                res = one_shot_train(
                    state, eta, model, config.adam, config.schedule.omega_stage2, frozen=frozen,
                    g2_every=g2_every, keep_trajectory=keep_trajectory, epoch_offset=offset,
                    incumbent=incumbent, admissible_only=feasible,
                )
            else:
                res = two_stage_train(
                    state, eta, model, config.adam, config.schedule, frozen=frozen,
                    g2_every=g2_every, keep_trajectory=keep_trajectory, epoch_offset=offset,
                    incumbent=incumbent, admissible_only=feasible,
                )
        except TrainingAbortedError as exc:
            exc.context.setdefault("iteration", k)
            raise
        design = res.state.design(loss_params)
        eta_next = update(design, scenario)
        if not math.isfinite(eta_next):
            raise TrainingAbortedError(
                "non-finite efficiency update", snapshot=res.state.params.copy(), context={"iteration": k}
            )
        report = metrics.evaluate(design, scenario)
        rec = IterationRecord(
            k, eta, eta_next, res.loss, res.objective, res.residuals, report, res.state.params.copy(),
            res.feasible, res.stage1_epochs, res.evaluations,
        )
        trace.records.append(rec)
        trace.train_rows.extend(res.trace)
        trace.trajectory.extend(res.trajectory)
        if eta_next < eta - MONOTONE_RTOL * abs(eta):
            trace.monotonicity_violations += 1
        if log is not None:
            log(rec)
        feasible = res.feasible
        # the next subproblem starts at the selected design with fresh moments
        state = TrainerState.fresh(res.state.params)
        incumbent = res.state
        eta = eta_next
        if abs(res.objective) <= config.epsilon and feasible:
            trace.converged = True
            break
    return DinkelbachResult(design, eta, trace, feasible, model.k_scale)


def solve(scenario: metrics.Scenario, config: DinkelbachConfig = None, seed=0, init="traffic", **kwargs):
    """Maximise IREE from a seeded initial design."""
    config = config or DinkelbachConfig()
    state = initial_state(scenario, seed, mode=init)
    return run_dinkelbach(scenario, config, state, ObjectiveKind.IREE, **kwargs)
