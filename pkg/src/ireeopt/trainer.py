"""Adam, two-stage penalty training and the smoothness diagnostic."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError, TrainingAbortedError
from .gradients import B_FLOOR, P_FLOOR, LossModel, ParamLayout, _second_order_norm
from .metrics import Scenario
from .propagation import NetworkDesign, random_design

TRACE_COLUMNS = ("epoch", "loss_total", "loss_utility", "loss_power", "loss_penalty", "g1_norm", "g2_norm")
BUDGET_SHRINK = 1.0 - 1e-12
# a candidate may replace the incumbent only if its unpenalised loss is <= this
# (scaled units); the incumbent itself scores ~0 at the current eta
ADMISSIBLE_TOL = 1e-12


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    n_epoch: int = 2000
    # powers move in u = ln(P) / gain, so one step changes P by about gain * lr
    # relative; 0 keeps the linear P / P_max coordinate
    log_power_gain: float = 20.0

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidInputError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0.0:
            raise InvalidInputError("epsilon must be positive")
        if int(self.n_epoch) != self.n_epoch or self.n_epoch < 0:
            raise InvalidInputError("n_epoch must be a non-negative integer")
        if not (self.log_power_gain >= 0.0 and math.isfinite(self.log_power_gain)):
            raise InvalidInputError("log_power_gain must be finite and non-negative")


@dataclass(frozen=True)
class StageSchedule:
    """Stage 1 runs penalty-free; stage 2 switches the penalty weight on.

    The switch happens after ``stage1_fraction`` of the epochs, or earlier when
    ``plateau_window`` > 0 and the stage-1 loss moved by less than
    ``plateau_rtol`` (relative) over the last ``plateau_window`` epochs.
    """

    omega_stage1: float = 0.0
    omega_stage2: float = 100.0
    stage1_fraction: float = 0.7
    plateau_window: int = 200
    plateau_rtol: float = 1e-6

    def __post_init__(self):
        if self.omega_stage1 != 0.0:
            raise InvalidInputError("stage 1 is penalty-free by construction")
        if not (self.omega_stage2 >= 0.0 and math.isfinite(self.omega_stage2)):
            raise InvalidInputError("omega_stage2 must be finite and non-negative")
        if not 0.0 <= self.stage1_fraction <= 1.0:
            raise InvalidInputError("stage1_fraction must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class TrainerState:
    params: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    def __post_init__(self):
        p = np.array(self.params, dtype=float)
        if self.first_moment.shape != p.shape or self.second_moment.shape != p.shape:
            raise InvalidInputError("moments must match the parameter layout")
        if self.step_count < 0:
            raise InvalidInputError("step_count must be non-negative")
        object.__setattr__(self, "params", p)

    @classmethod
    def fresh(cls, params):
        p = np.array(getattr(params, "values", params), dtype=float)
        return cls(p, np.zeros_like(p), np.zeros_like(p), 0)

    @property
    def layout(self):
        return ParamLayout(self.params.size // 4)

    def design(self, loss=None) -> NetworkDesign:
        loc, bw, pw = self.layout.split(self.params)
        return NetworkDesign.from_arrays(loc, bw, pw, loss)


@dataclass
class TraceRow:
    epoch: int
    loss_total: float
    loss_utility: float
    loss_power: float
    loss_penalty: float
    g1_norm: float
    g2_norm: float = math.nan
    stage: int = 1

    def as_csv(self):
        return [str(self.epoch)] + [_fmt(getattr(self, c)) for c in TRACE_COLUMNS[1:]]


def _fmt(x):
    return "" if math.isnan(x) else repr(float(x))


def write_trace_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow(r.as_csv())


@dataclass
class StageResult:
    best: TrainerState
    last: TrainerState
    best_loss: float
    trace: list
    evaluations: int
    trajectory: list = field(default_factory=list)


class Projector:
    """Keeps iterates inside the box the model is defined on."""

    def __init__(self, scenario: Scenario, n_bs: int, frozen=None):
        self.layout = ParamLayout(n_bs)
        x0, y0, x1, y1 = scenario.grid.area_bounds
        self.lo = np.tile([x0, y0], n_bs)
        self.hi = np.tile([x1, y1], n_bs)
        self.b_max = scenario.b_max
        self.p_max = scenario.p_max
        self.frozen = None if frozen is None else np.asarray(frozen, dtype=bool)

    def floors(self, theta):
        lay = self.layout
        theta[lay.loc] = np.clip(theta[lay.loc], self.lo, self.hi)
        theta[lay.bw] = np.maximum(theta[lay.bw], B_FLOOR)
        theta[lay.pw] = np.maximum(theta[lay.pw], P_FLOOR)
        return theta

    def repair(self, theta):
        """Scale bandwidth and power blocks back inside their budgets."""
        lay = self.layout
        for sl, cap, floor in ((lay.bw, self.b_max, B_FLOOR), (lay.pw, self.p_max, P_FLOOR)):
            s = float(np.sum(theta[sl]))
            if s > cap:
                theta[sl] = np.maximum(theta[sl] * (cap * BUDGET_SHRINK / s), floor)
        return theta


class Reparam:
    """Maps physical parameters to optimizer coordinates and back.

    Coordinates are divided by ``scales``; those in ``log_mask`` instead use
    u = ln(x) / gain, which suits powers that span several decades.
    """

    def __init__(self, scales, log_mask=None, gain=0.0):
        self.scales = np.asarray(scales, dtype=float)
        self.gain = float(gain)
        if log_mask is None or self.gain == 0.0:
            self.log = np.zeros(self.scales.shape, dtype=bool)
        else:
            self.log = np.asarray(log_mask, dtype=bool)

    @classmethod
    def for_layout(cls, layout: ParamLayout, scenario: Scenario, config: AdamConfig):
        mask = np.zeros(layout.size, dtype=bool)
        mask[layout.pw] = True
        return cls(layout.scales(scenario), mask, config.log_power_gain)

    def forward(self, theta):
        u = theta / self.scales
        if self.log.any():
            u[self.log] = np.log(theta[self.log]) / self.gain
        return u

    def backward(self, u):
        theta = u * self.scales
        if self.log.any():
            theta[self.log] = np.exp(self.gain * u[self.log])
        return theta

    def grad(self, theta, g):
        gu = g * self.scales
        if self.log.any():
            gu[self.log] = g[self.log] * theta[self.log] * self.gain
        return gu


def adam_step(state: TrainerState, gradient, config: AdamConfig, scales=None, project=None, reparam=None) -> TrainerState:
    """One bias-corrected Adam update.

    ``reparam`` (or the plain per-coordinate ``scales``) maps physical
    coordinates to the optimizer's O(1) units; the moments live in those
    units.  ``project`` (in place, physical units) runs after the update.
    """
    g = np.asarray(gradient, dtype=float)
    if reparam is None:
        reparam = Reparam(np.ones_like(g) if scales is None else scales)
    gs = reparam.grad(state.params, g)
    t = state.step_count + 1
    m = config.beta1 * state.first_moment + (1.0 - config.beta1) * gs
    v = config.beta2 * state.second_moment + (1.0 - config.beta2) * gs * gs
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    u = reparam.forward(state.params) - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    theta = reparam.backward(u)
    if project is not None:
        theta = project(theta)
    return TrainerState(theta, m, v, t)


def penalty_residual(breakdown, theta, model: LossModel):
    """Unweighted penalty sum at ``theta``; mirrors the kernel's definition."""
    lay = ParamLayout(theta.size // 4)
    sc = model.scenario
    r = max(float(np.sum(theta[lay.bw])) / sc.b_max - 1.0, 0.0)
    r += max(float(np.sum(theta[lay.pw])) / sc.p_max - 1.0, 0.0)
    if model.zeta_flag:
        r += max(sc.zeta_min - breakdown.zeta, 0.0)
    return r


def _plateaued(history, window, rtol):
    if window <= 0 or len(history) <= window:
        return False
    old, new = history[-window - 1], history[-1]
    return abs(new - old) <= rtol * max(abs(old), 1e-300)


def train_stage(
    state: TrainerState,
    eta: float,
    omega: float,
    model: LossModel,
    config: AdamConfig,
    n_epoch=None,
    select_omega=None,
    repair=False,
    frozen=None,
    epoch_offset=0,
    stage=1,
    stop=None,
    g2_every=0,
    keep_trajectory=0,
    incumbent=None,
    admissible_only=True,
    repair_candidates=False,
) -> StageResult:
    """Run Adam on the scaled loss for ``n_epoch`` full-batch epochs.

    Each epoch evaluates loss and gradient at the current iterate and then
    steps, so the trace has one row per epoch and the entry iterate is a
    candidate for the best.  Candidates are ranked by the loss under
    ``select_omega`` (defaults to ``omega``).  ``incumbent`` is an extra
    candidate (a state from an earlier run) scored before the first epoch.
    With ``admissible_only`` an iterate can only become the best when its
    unpenalised loss is <= 0, i.e. it does at least as well as the design that
    produced ``eta``.  ``repair_candidates`` scores each iterate after pulling
    its budgets back inside the box.  ``stop(history)`` may end the stage early.
    """
    scenario = model.scenario
    n_epoch = config.n_epoch if n_epoch is None else int(n_epoch)
    sel = omega if select_omega is None else select_omega
    layout = state.layout
    reparam = Reparam.for_layout(layout, scenario, config)
    proj = Projector(scenario, layout.n_bs)
    mask = None if frozen is None else np.asarray(frozen, dtype=bool)

    def project(theta):
        proj.floors(theta)
        if repair:
            proj.repair(theta)
        return theta

    def score(b, theta):
        if repair_candidates:
            fixed = proj.repair(theta.copy())
            if not np.array_equal(fixed, theta):
                b = model.loss(fixed, eta, sel)
                return b, b.total, fixed
        if sel == omega:
            return b, b.total, theta
        return b, b.utility_term + b.power_term + sel * penalty_residual(b, theta, model), theta

    best, best_val = state, math.inf
    if incumbent is not None:
        b = model.loss(incumbent.params, eta, sel)
        if math.isfinite(b.total):
            best, best_val = incumbent, b.total
    cur = state
    trace = []
    history = []
    trajectory = []
    evals = 0
    for e in range(n_epoch):
        b, g = model.loss_and_grad(cur.params, eta, omega)
        evals += 1
        if not (math.isfinite(b.total) and np.all(np.isfinite(g))):
            raise TrainingAbortedError(
                f"non-finite loss at epoch {epoch_offset + e}",
                snapshot=best.params.copy(),
                context={"epoch": epoch_offset + e, "stage": stage, "eta": eta, "omega": omega},
            )
        sb, val, theta = score(b, cur.params)
        ok = not admissible_only or sb.utility_term + sb.power_term <= ADMISSIBLE_TOL
        if ok and val < best_val:
            best = cur if theta is cur.params else replace(cur, params=theta)
            best_val = val
        g2 = math.nan
        if g2_every and e % g2_every == 0:
            g2 = _second_order_norm(model, cur.params, eta, omega)
        trace.append(
            TraceRow(
                epoch_offset + e,
                b.total,
                b.utility_term,
                b.power_term,
                b.penalty_term,
                float(np.linalg.norm(g[layout.pw] * scenario.p_max)),
                g2,
                stage,
            )
        )
        if keep_trajectory and e % keep_trajectory == 0:
            trajectory.append(cur.params.copy())
        history.append(b.total)
        if mask is not None:
            g = np.where(mask, 0.0, g)
        cur = adam_step(cur, g, config, project=project, reparam=reparam)
        if stop is not None and stop(history):
            break
    return StageResult(best, cur, best_val, trace, evals, trajectory)


@dataclass
class TwoStageResult:
    state: TrainerState
    last: TrainerState
    loss: float
    trace: list
    evaluations: int
    stage1_epochs: int
    residuals: tuple
    feasible: bool
    trajectory: list = field(default_factory=list)
    objective: float = math.nan  # unpenalised part of ``loss``, i.e. -F(eta)/K


def _final_residuals(theta, model):
    from .metrics import feasibility_residual

    design = NetworkDesign.from_arrays(*ParamLayout(theta.size // 4).split(theta), model.scenario.loss_defaults)
    return feasibility_residual(design, model.scenario, with_zeta=model.zeta_flag)


def is_feasible(res, scenario: Scenario, zeta_checked=True, zeta_tol=1e-3):
    ok = res.bandwidth <= 1e-6 * scenario.b_max and res.power <= 1e-6 * scenario.p_max
    return ok and (not zeta_checked or res.zeta <= zeta_tol)


def two_stage_train(
    state: TrainerState,
    eta: float,
    model: LossModel,
    config: AdamConfig,
    schedule: StageSchedule,
    frozen=None,
    g2_every=0,
    keep_trajectory=0,
    epoch_offset=0,
    incumbent=None,
    admissible_only=True,
) -> TwoStageResult:
    """Penalty-free stage 1 followed by the penalised stage 2.

    Stage 2 starts from the last stage-1 iterate with the Adam moments carried
    over.  The returned state is the best admissible iterate under the stage-2
    loss (``incumbent`` included); when the penalty is on, its budgets are
    repaired onto the feasible set.
    """
    n = config.n_epoch
    n1_cap = int(round(schedule.stage1_fraction * n))
    om2 = schedule.omega_stage2
    stop = None
    if schedule.plateau_window > 0:
        stop = lambda h: _plateaued(h, schedule.plateau_window, schedule.plateau_rtol)  # noqa: E731
    s1 = train_stage(
        state, eta, schedule.omega_stage1, model, config, n_epoch=n1_cap, select_omega=om2,
        frozen=frozen, epoch_offset=epoch_offset, stage=1, stop=stop, g2_every=g2_every,
        keep_trajectory=keep_trajectory, incumbent=incumbent, repair_candidates=om2 > 0.0,
        admissible_only=admissible_only,
    )
    n1 = s1.evaluations
    best = s1.best
    s2 = None
    if n - n1 > 0:
        s2 = train_stage(
            s1.last, eta, om2, model, config, n_epoch=n - n1, select_omega=om2, repair=om2 > 0.0,
            frozen=frozen, epoch_offset=epoch_offset + n1, stage=2, g2_every=g2_every,
            keep_trajectory=keep_trajectory, incumbent=s1.best if math.isfinite(s1.best_loss) else None,
            admissible_only=admissible_only,
        )
        best = s2.best
    last = s1.last if s2 is None else s2.last
    theta = best.params.copy()
    if om2 > 0.0:
        Projector(model.scenario, best.layout.n_bs).repair(theta)
    best = replace(best, params=theta)
    b = model.loss(theta, eta, om2)
    res = _final_residuals(theta, model)
    feasible = is_feasible(res, model.scenario, zeta_checked=model.zeta_flag)
    trace, traj, evals = list(s1.trace), list(s1.trajectory), n1
    if s2 is not None:
        trace += s2.trace
        traj += s2.trajectory
        evals += s2.evaluations
    return TwoStageResult(
        best, last, b.total, trace, evals, n1, res, feasible, traj, b.utility_term + b.power_term
    )


def one_shot_train(
    state, eta, model, config, omega, frozen=None, g2_every=0, keep_trajectory=0, epoch_offset=0, incumbent=None,
    admissible_only=True,
):
    """Single stage with the penalty on from the first epoch (comparison baseline)."""
    s = train_stage(
        state, eta, omega, model, config, select_omega=omega, repair=False, frozen=frozen,
        epoch_offset=epoch_offset, g2_every=g2_every, keep_trajectory=keep_trajectory, incumbent=incumbent,
        admissible_only=admissible_only,
    )
    theta = s.best.params
    res = _final_residuals(theta, model)
    b = model.loss(theta, eta, omega)
    return TwoStageResult(
        s.best, s.last, b.total, s.trace, s.evaluations, s.evaluations, res,
        is_feasible(res, model.scenario, zeta_checked=model.zeta_flag), s.trajectory,
        b.utility_term + b.power_term,
    )


INIT_MODES = ("traffic", "uniform")
TRAFFIC_INIT_POWER = 2.0


def initial_state(scenario: Scenario, seed, n_bs=None, mode="traffic") -> TrainerState:
    """Seeded starting point: equal bandwidth split and half the power budget.

    ``mode="traffic"`` places stations on distinct sample points drawn with
    probability proportional to traffic; ``"uniform"`` draws them uniformly
    over the area.
    """
    rng = np.random.default_rng(seed)
    n = scenario.n_bs if n_bs is None else n_bs
    lay = ParamLayout(n)
    if mode == "uniform":
        design = random_design(n, scenario.grid.area_bounds, scenario.b_max, scenario.p_max, rng, scenario.loss_defaults)
        return TrainerState.fresh(lay.join(design.locations, design.bandwidths, design.powers))
    if mode != "traffic":
        raise InvalidInputError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    d = scenario.traffic.values
    pos = np.flatnonzero(d > 0.0)
    if pos.size < n:
        raise InvalidInputError("traffic-weighted init needs at least n_bs samples with traffic")
    wts = d[pos] ** TRAFFIC_INIT_POWER
    idx = rng.choice(pos, size=n, replace=False, p=wts / wts.sum())
    return TrainerState.fresh(
        lay.join(scenario.grid.points[idx], np.full(n, scenario.b_max / n), np.full(n, 0.5 * scenario.p_max / n))
    )


# -- smoothness diagnostic ----------------------------------------------------


@dataclass(frozen=True)
class SmoothnessFit:
    pairs: tuple
    r2_exponential: float
    r2_piecewise: float
    relation: str


def _r2(y, yhat):
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def _hinge_fit(x, y):
    """Best continuous two-segment linear fit; breakpoints scanned over the data."""
    order = np.argsort(x)
    xs, ys = x[order], y[order]
    best = _r2(ys, np.polyval(np.polyfit(xs, ys, 1), xs)) if np.ptp(xs) > 0 else 0.0
    for k in range(2, len(xs) - 2):
        knot = xs[k]
        a = np.column_stack([np.ones_like(xs), xs, np.maximum(xs - knot, 0.0)])
        coef, *_ = np.linalg.lstsq(a, ys, rcond=None)
        best = max(best, _r2(ys, a @ coef))
    return best


def classify_relation(g1, g2) -> SmoothnessFit:
    """Exponential-like when log(g2) ~ g1 fits better than a hinge g2 ~ g1."""
    x = np.asarray(g1, dtype=float)
    y = np.asarray(g2, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    pairs = tuple(zip(x.tolist(), y.tolist()))
    if len(x) < 5 or np.ptp(y) <= 1e-12 * max(np.max(np.abs(y)), 1e-300) or np.ptp(x) == 0.0:
        # constant curvature is the degenerate straight line
        return SmoothnessFit(pairs, 0.0, 1.0, "piecewise_linear")
    r2_pw = _hinge_fit(x, y)
    pos = y > 0.0
    if pos.sum() >= 3:
        ly = np.log(y[pos])
        r2_exp = _r2(ly, np.polyval(np.polyfit(x[pos], ly, 1), x[pos]))
    else:
        r2_exp = -math.inf
    relation = "exponential" if r2_exp > r2_pw else "piecewise_linear"
    return SmoothnessFit(pairs, r2_exp, r2_pw, relation)


def smoothness_diagnostic(trajectory, eta, omega, model: LossModel, path=None) -> SmoothnessFit:
    """(g1, g2) pairs along a trajectory of parameter vectors, plus their fit class."""
    g1, g2 = [], []
    p_max = model.scenario.p_max
    for theta in trajectory:
        theta = np.asarray(getattr(theta, "params", theta), dtype=float)
        lay = ParamLayout(theta.size // 4)
        g = model.grad(theta, eta, omega)
        g1.append(float(np.linalg.norm(g[lay.pw] * p_max)))
        g2.append(_second_order_norm(model, theta, eta, omega))
    fit = classify_relation(g1, g2)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("g1_norm", "g2_norm"))
            for a, b in zip(g1, g2):
                w.writerow((repr(a), repr(b)))
    return fit
