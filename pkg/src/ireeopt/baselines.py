"""EE- and SE-oriented reference designs built on the same trainer.

Both baselines swap the objective and keep everything else (parameterisation,
Adam, budget penalties).  Neither enforces the utility floor zeta_min.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from . import dinkelbach as dk
from . import metrics
from .errors import InvalidInputError
from .gradients import LossModel, ObjectiveKind
from .propagation import NetworkDesign
from .trainer import Projector, initial_state, is_feasible, train_stage, _final_residuals

__all__ = [
    "ObjectiveKind",
    "BaselineResult",
    "maximize_ee",
    "maximize_se",
    "maximize_iree",
    "compare",
    "paired_margins",
    "ComparisonRow",
    "ComparisonTable",
    "COMPARE_COLUMNS",
    "dbw_to_watts",
    "watts_to_dbw",
]

COMPARE_COLUMNS = ("objective", "p_max_dbw", "b_max_hz", "c_tot", "d_tot", "xi", "zeta", "p_t", "iree", "ee", "se", "seed")


def dbw_to_watts(dbw):
    return 10.0 ** (float(dbw) / 10.0)


def watts_to_dbw(w):
    return 10.0 * math.log10(w)


@dataclass
class BaselineResult:
    objective: ObjectiveKind
    design: NetworkDesign
    value: float
    report: metrics.MetricReport
    converged: bool
    feasible: bool
    trace: dk.DinkelbachTrace = None
    train_rows: list = field(default_factory=list)

    def __iter__(self):
        # unpacks as (design, value, trace)
        return iter((self.design, self.value, self.trace))


def _from_dinkelbach(objective, res: dk.DinkelbachResult, scenario) -> BaselineResult:
    report = metrics.evaluate(res.design, scenario)
    return BaselineResult(objective, res.design, res.eta, report, res.converged, res.feasible, res.trace, res.trace.train_rows)


def _start(scenario, seed, init, state):
    return initial_state(scenario, seed, mode=init) if state is None else state


def maximize_iree(scenario, config=None, seed=0, init="traffic", state=None, **kwargs) -> BaselineResult:
    """``state`` overrides the seeded start; extra keywords go to the Dinkelbach loop."""
    config = config or dk.DinkelbachConfig()
    res = dk.run_dinkelbach(scenario, config, _start(scenario, seed, init, state), ObjectiveKind.IREE, **kwargs)
    return _from_dinkelbach(ObjectiveKind.IREE, res, scenario)


def maximize_ee(scenario, config=None, seed=0, init="traffic", state=None, **kwargs) -> BaselineResult:
    """Dinkelbach on C_Tot / P_T with budget penalties only."""
    config = config or dk.DinkelbachConfig()
    res = dk.run_dinkelbach(scenario, config, _start(scenario, seed, init, state), ObjectiveKind.EE, **kwargs)
    return _from_dinkelbach(ObjectiveKind.EE, res, scenario)


def maximize_se(scenario, config=None, seed=0, init="traffic", state=None, frozen=None) -> BaselineResult:
    """One penalised stage maximising C_Tot; value is C_Tot / B_max."""
    config = config or dk.DinkelbachConfig()
    state = _start(scenario, seed, init, state)
    start = state.design(scenario.loss_defaults)
    model = LossModel(scenario, ObjectiveKind.SE, dk.reference_rate(start, scenario))
    omega = config.schedule.omega_stage2
    s = train_stage(state, 0.0, omega, model, config.adam, repair=True, incumbent=state, frozen=frozen)
    theta = Projector(scenario, state.layout.n_bs).repair(s.best.params.copy())
    design = NetworkDesign.from_arrays(*state.layout.split(theta), scenario.loss_defaults)
    res = _final_residuals(theta, model)
    report = metrics.evaluate(design, scenario)
    feasible = is_feasible(res, scenario, zeta_checked=False)
    return BaselineResult(ObjectiveKind.SE, design, report.c_tot / scenario.b_max, report, feasible, feasible, None, s.trace)


_RUNNERS = {
    ObjectiveKind.IREE: maximize_iree,
    ObjectiveKind.EE: maximize_ee,
    ObjectiveKind.SE: maximize_se,
}


@dataclass(frozen=True)
class ComparisonRow:
    objective: str
    p_max_dbw: float
    b_max_hz: float
    report: metrics.MetricReport
    seed: int

    def values(self):
        r = self.report
        return (
            self.objective, self.p_max_dbw, self.b_max_hz, r.c_tot, r.d_tot, r.xi, r.zeta,
            r.p_t, r.iree, r.ee, r.se, self.seed,
        )


@dataclass
class ComparisonTable:
    rows: list

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for row in self.rows:
            w.writerow([_cell(v) for v in row.values()])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def select(self, objective=None, p_max_dbw=None, seed=None):
        out = []
        for r in self.rows:
            if objective is not None and r.objective != ObjectiveKind.parse(objective).value:
                continue
            if p_max_dbw is not None and r.p_max_dbw != p_max_dbw:
                continue
            if seed is not None and r.seed != seed:
                continue
            out.append(r)
        return out


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _run_cell(args):
    objective, scenario, config, seed, init = args
    res = _RUNNERS[objective](scenario, config, seed, init)
    return res.report


def compare(scenario, p_max_dbw, seeds, config=None, objectives=(ObjectiveKind.IREE, ObjectiveKind.EE, ObjectiveKind.SE),
            workers=1, init="traffic") -> ComparisonTable:
    """Run every (objective, P_max, seed) cell and tabulate the reports.

    ``scenario`` is a Scenario or a callable ``seed -> Scenario`` (to vary the
    traffic map with the seed).  Rows come back ordered by P_max, seed,
    objective regardless of ``workers``.
    """
    objectives = [ObjectiveKind.parse(o) for o in objectives]
    if not objectives:
        raise InvalidInputError("need at least one objective")
    jobs, keys = [], []
    for dbw in p_max_dbw:
        for seed in seeds:
            base = scenario(seed) if callable(scenario) else scenario
            sc = base.with_budgets(p_max=dbw_to_watts(dbw))
            for obj in objectives:
                jobs.append((obj, sc, config, int(seed), init))
                keys.append((obj.value, float(dbw), float(sc.b_max), int(seed)))
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=int(workers)) as ex:
            reports = list(ex.map(_run_cell, jobs))
    else:
        reports = [_run_cell(j) for j in jobs]
    rows = [ComparisonRow(o, dbw, bmax, rep, seed) for (o, dbw, bmax, seed), rep in zip(keys, reports)]
    return ComparisonTable(rows)


def paired_margins(table: ComparisonTable, rtol=1e-6):
    """Per (P_max, seed): did each optimiser win its own objective?"""
    out = []
    cells = sorted({(r.p_max_dbw, r.seed) for r in table.rows})
    for dbw, seed in cells:
        by = {r.objective: r.report for r in table.select(p_max_dbw=dbw, seed=seed)}
        if "iree" not in by or "ee" not in by:
            continue
        a, b = by["iree"], by["ee"]
        out.append({
            "p_max_dbw": dbw,
            "seed": seed,
            "iree_wins_iree": a.iree >= b.iree * (1.0 - rtol),
            "ee_wins_ee": b.ee >= a.ee * (1.0 - rtol),
            "xi_lower": a.xi < b.xi,
        })
    return out

