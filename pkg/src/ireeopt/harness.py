"""Experiment orchestration behind the command line.

Every runner writes into an output directory and returns an exit code.  All
artifacts are deterministic functions of (scenario file, seed, flags): floats
are written with ``repr`` and JSON keys are sorted.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis, metrics
from . import baselines as bl
from . import config as cfgmod
from . import dinkelbach as dk
from . import gradients as gr
from . import propagation as prop
from . import traffic as tr
from .errors import IREEError, InvalidInputError
from .gradients import ObjectiveKind
from .trainer import AdamConfig, write_trace_csv

DEFAULT_PMAX_DBW = (0.0, 10.0, 20.0, 30.0)
POWER_BINDING_RTOL = 1e-3

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_INPUT = 2
EXIT_CHECK_FAILED = 3


class RegionLabel(enum.Enum):
    POWER_CONSTRAINED = "power_constrained"
    CAPACITY_CONSTRAINED = "capacity_constrained"
    JS_CONSTRAINED = "js_constrained"


def classify_region(report: metrics.MetricReport, design: prop.NetworkDesign, p_max: float) -> RegionLabel:
    """JS-constrained iff C_Tot >= D_Tot; otherwise split on whether the power budget binds."""
    if report.c_tot >= report.d_tot:
        return RegionLabel.JS_CONSTRAINED
    if float(np.sum(design.powers)) >= (1.0 - POWER_BINDING_RTOL) * p_max:
        return RegionLabel.POWER_CONSTRAINED
    return RegionLabel.CAPACITY_CONSTRAINED


@dataclass(frozen=True)
class ShadowingSpec:
    sigma_db: float
    n_draws: int = 100

    def __post_init__(self):
        if not (self.sigma_db >= 0.0 and math.isfinite(self.sigma_db)):
            raise InvalidInputError("shadowing sigma must be finite and non-negative")
        if int(self.n_draws) != self.n_draws or self.n_draws < 1:
            raise InvalidInputError("shadowing needs at least one draw")


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "rural"
    objective: ObjectiveKind = ObjectiveKind.IREE
    seeds: tuple = (0,)
    out: str = "out"
    p_max_dbw: tuple = ()
    b_max_hz: tuple = ()
    shadowing: ShadowingSpec = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "objective", ObjectiveKind.parse(self.objective))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "p_max_dbw", tuple(float(v) for v in self.p_max_dbw))
        object.__setattr__(self, "b_max_hz", tuple(cfgmod.parse_hz(v) for v in self.b_max_hz))
        if not self.seeds:
            raise InvalidInputError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise InvalidInputError("seeds must be non-negative")
        if self.p_max_dbw and self.b_max_hz:
            raise InvalidInputError("choose one sweep axis: P_max or B_max")
        if not all(math.isfinite(v) for v in self.p_max_dbw):
            raise InvalidInputError("P_max values must be finite")
        if not all(v > 0.0 and math.isfinite(v) for v in self.b_max_hz):
            raise InvalidInputError("B_max values must be positive")

    @property
    def sweep_axis(self):
        if self.b_max_hz:
            return "b_max_hz", self.b_max_hz
        if self.p_max_dbw:
            return "p_max_dbw", self.p_max_dbw
        return None

    def load_scenario(self) -> cfgmod.ScenarioConfig:
        return cfgmod.load(self.scenario)


# -- single optimisation point --------------------------------------------------


@dataclass
class PointResult:
    objective: ObjectiveKind
    seed: int
    scenario: metrics.Scenario
    design: prop.NetworkDesign
    report: metrics.MetricReport
    converged: bool
    feasible: bool
    trace: dk.DinkelbachTrace = None
    train_rows: list = field(default_factory=list)

    @property
    def region(self):
        return classify_region(self.report, self.design, self.scenario.p_max)


def optimize_point(scfg: cfgmod.ScenarioConfig, objective, seed, p_max_dbw=None, b_max_hz=None) -> PointResult:
    sc = scfg.scenario(seed, p_max_dbw=p_max_dbw, b_max_hz=b_max_hz)
    runner = {
        ObjectiveKind.IREE: bl.maximize_iree,
        ObjectiveKind.EE: bl.maximize_ee,
        ObjectiveKind.SE: bl.maximize_se,
    }[ObjectiveKind.parse(objective)]
    res = runner(sc, scfg.dinkelbach(), seed=seed, init=scfg.init)
    return PointResult(res.objective, seed, sc, res.design, res.report, res.converged, res.feasible, res.trace, res.train_rows)


def _point_job(args):
    scfg, objective, seed, axis, value = args
    kw = {} if axis is None else {axis: value}
    return optimize_point(scfg, objective, seed, **kw)


def _map(fn, jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=int(workers)) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


# -- shadowing ----------------------------------------------------------------------


@dataclass(frozen=True)
class ShadowingResult:
    mean: metrics.MetricReport
    std: metrics.MetricReport
    sigma_db: float
    n_draws: int

    def to_dict(self):
        return {"mean": self.mean.to_dict(), "std": self.std.to_dict(), "sigma_db": self.sigma_db, "n_draws": self.n_draws}


def shadowing_factors(n_bs, n_samples, sigma_db, rng):
    """Multiplicative log-normal factors on L, one per (station, sample) pair."""
    return 10.0 ** (sigma_db * rng.standard_normal((n_bs, n_samples)) / 10.0)


def shadowing_eval(design, scenario, sigma_db, n_draws, seed) -> ShadowingResult:
    """Mean and standard deviation of the metric report over shadowing draws."""
    shad = ShadowingSpec(sigma_db, n_draws)
    if shad.sigma_db == 0.0:
        rep = metrics.evaluate(design, scenario)
        zero = metrics.MetricReport(*(0.0 for _ in rep.to_dict()))
        return ShadowingResult(rep, zero, 0.0, shad.n_draws)
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(shad.n_draws):
        shadow = shadowing_factors(len(design), scenario.grid.size, shad.sigma_db, rng)
        rows.append(list(metrics.evaluate(design, scenario, shadow=shadow).to_dict().values()))
    arr = np.array(rows)
    return ShadowingResult(
        metrics.MetricReport(*arr.mean(axis=0)),
        metrics.MetricReport(*arr.std(axis=0)),
        shad.sigma_db,
        shad.n_draws,
    )


# -- serialisation ------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(obj, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def _cell(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def design_dict(design: prop.NetworkDesign):
    return {
        "locations_m": design.locations.tolist(),
        "bandwidths_hz": design.bandwidths.tolist(),
        "powers_w": design.powers.tolist(),
    }


FIELD_COLUMNS = ("objective", "seed", "axis_value", "x_m", "y_m", "traffic", "capacity")


def field_rows(point: PointResult, axis_value=""):
    sc = point.scenario
    cap = metrics.capacity_field(point.design, sc)
    for (x, y), d, c in zip(sc.grid.points, sc.traffic.values, cap.values):
        yield (point.objective.value, point.seed, axis_value, float(x), float(y), float(d), float(c))


def analysis_for(point: PointResult, scfg: cfgmod.ScenarioConfig) -> dict:
    sc = point.scenario
    n_iter = len(point.trace.records) if point.trace is not None else 1
    out = {
        "gap": analysis.optimality_gap(point.design, sc).to_dict(),
        "complexity": {
            "predicted": analysis.complexity_estimate(sc, scfg.dinkelbach(), n_iterations=n_iter),
            "loss_evaluations": point.trace.evaluations if point.trace is not None else None,
        },
        "bounds": None,
    }
    if point.objective is ObjectiveKind.IREE and point.trace is not None and point.trace.records:
        out["bounds"] = analysis.check_bounds(point.trace, sc).to_dict()
        out["monotonicity_violations"] = point.trace.monotonicity_violations
    return out


# -- subcommands -------------------------------------------------------------------


def run_optimize(cfg: RunConfig) -> int:
    """One optimisation per seed; one run directory per seed when several are given."""
    scfg = cfg.load_scenario()
    os.makedirs(cfg.out, exist_ok=True)
    axis = cfg.sweep_axis
    value = None if axis is None else axis[1][0]
    jobs = [(scfg, cfg.objective, s, None if axis is None else axis[0], value) for s in cfg.seeds]
    points = _map(_point_job, jobs, cfg.workers)
    code = EXIT_OK
    for point in points:
        run_dir = cfg.out if len(cfg.seeds) == 1 else os.path.join(cfg.out, f"seed_{point.seed}")
        os.makedirs(run_dir, exist_ok=True)
        code = max(code, _write_run(point, scfg, cfg, run_dir))
    return code


def _write_run(point: PointResult, scfg, cfg: RunConfig, run_dir) -> int:
    sc = point.scenario
    block = analysis_for(point, scfg)
    body = {
        "scenario": scfg.name,
        "objective": point.objective.value,
        "seed": point.seed,
        "p_max_w": sc.p_max,
        "b_max_hz": sc.b_max,
        "converged": point.converged,
        "feasible": point.feasible,
        "iterations": len(point.trace.records) if point.trace is not None else None,
        "region": point.region,
        "report": point.report.to_dict(),
        "design": design_dict(point.design),
        "analysis": block,
    }
    if cfg.shadowing is not None:
        body["shadowing"] = shadowing_eval(
            point.design, sc, cfg.shadowing.sigma_db, cfg.shadowing.n_draws, point.seed
        ).to_dict()
    write_json(body, os.path.join(run_dir, "report.json"))
    if point.trace is not None:
        point.trace.write(os.path.join(run_dir, "trace.jsonl"))
    write_trace_csv(point.train_rows, os.path.join(run_dir, "train_trace.csv"))
    write_csv(os.path.join(run_dir, "fields.csv"), FIELD_COLUMNS, field_rows(point))
    if not point.converged:
        return EXIT_NOT_CONVERGED
    bounds = block["bounds"]
    if bounds is not None and not bounds["passed"]:
        return EXIT_CHECK_FAILED
    return EXIT_OK


SWEEP_COLUMNS = (
    "axis", "value", "seed", "objective", "region", "converged", "feasible",
    "c_tot", "d_tot", "xi", "zeta", "p_t", "p_tx", "iree", "ee", "se",
)


def _sweep_points(cfg: RunConfig, scfg):
    axis = cfg.sweep_axis or ("p_max_dbw", DEFAULT_PMAX_DBW)
    name, values = axis
    jobs = [(scfg, cfg.objective, s, name, v) for v in values for s in cfg.seeds]
    points = _map(_point_job, jobs, cfg.workers)
    return name, [(v, p) for (_, _, _, _, v), p in zip(jobs, points)]


def sweep_row(name, value, p: PointResult):
    r = p.report
    return (
        name, value, p.seed, p.objective.value, p.region, p.converged, p.feasible,
        r.c_tot, r.d_tot, r.xi, r.zeta, r.p_t, float(np.sum(p.design.powers)), r.iree, r.ee, r.se,
    )


def run_sweep(cfg: RunConfig):
    """Optimise at every sweep value and seed; writes sweep.csv with a region per point.

    Returns (exit code, rows); the code is nonzero if any point failed to converge.
    """
    scfg = cfg.load_scenario()
    os.makedirs(cfg.out, exist_ok=True)
    name, pts = _sweep_points(cfg, scfg)
    rows = [sweep_row(name, v, p) for v, p in pts]
    write_csv(os.path.join(cfg.out, "sweep.csv"), SWEEP_COLUMNS, rows)
    code = EXIT_OK if all(p.converged for _, p in pts) else EXIT_NOT_CONVERGED
    return code, rows


TRADEOFF_COLUMNS = SWEEP_COLUMNS + ("sigma_db", "n_draws", "mean_iree", "std_iree", "mean_se", "mean_xi")


def run_tradeoff(cfg: RunConfig):
    """IREE versus SE along a budget sweep, with shadowed evaluation of every point.

    Shadowing defaults to the scenario's own sigma with 100 draws.
    """
    scfg = cfg.load_scenario()
    os.makedirs(cfg.out, exist_ok=True)
    shad = cfg.shadowing or ShadowingSpec(scfg.shadowing_db)
    name, pts = _sweep_points(cfg, scfg)
    rows = []
    for v, p in pts:
        sh = shadowing_eval(p.design, p.scenario, shad.sigma_db, shad.n_draws, p.seed)
        rows.append(sweep_row(name, v, p) + (shad.sigma_db, shad.n_draws, sh.mean.iree, sh.std.iree, sh.mean.se, sh.mean.xi))
    write_csv(os.path.join(cfg.out, "tradeoff.csv"), TRADEOFF_COLUMNS, rows)
    code = EXIT_OK if all(p.converged for _, p in pts) else EXIT_NOT_CONVERGED
    return code, rows


def run_compare(cfg: RunConfig):
    """IREE, EE and SE designs per (P_max, seed): compare.csv plus fields.csv."""
    scfg = cfg.load_scenario()
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.b_max_hz:
        raise InvalidInputError("compare sweeps P_max only")
    values = cfg.p_max_dbw or DEFAULT_PMAX_DBW
    objectives = (ObjectiveKind.IREE, ObjectiveKind.EE, ObjectiveKind.SE)
    jobs = [(scfg, o, s, "p_max_dbw", v) for v in values for s in cfg.seeds for o in objectives]
    points = _map(_point_job, jobs, cfg.workers)
    rows = [bl.ComparisonRow(p.objective.value, v, p.scenario.b_max, p.report, p.seed) for (_, _, _, _, v), p in zip(jobs, points)]
    table = bl.ComparisonTable(rows)
    table.write(os.path.join(cfg.out, "compare.csv"))
    frows = []
    for (_, _, _, _, v), p in zip(jobs, points):
        frows.extend(field_rows(p, v))
    write_csv(os.path.join(cfg.out, "fields.csv"), FIELD_COLUMNS, frows)
    code = EXIT_OK if all(p.converged for p in points) else EXIT_NOT_CONVERGED
    return code, table


def run_gen_traffic(cfg: RunConfig) -> int:
    scfg = cfg.load_scenario()
    os.makedirs(cfg.out, exist_ok=True)
    grid = scfg.grid()
    for s in cfg.seeds:
        tr.save_field(scfg.traffic(grid, s), os.path.join(cfg.out, f"traffic_seed{s}.csv"))
    return EXIT_OK


# -- validate ------------------------------------------------------------------------

VALIDATE_SIDE = 7
VALIDATE_BS = 5


def reduced_scenario(scfg: cfgmod.ScenarioConfig, seed, side=VALIDATE_SIDE, n_bs=VALIDATE_BS) -> metrics.Scenario:
    """Same physics on a ``side`` x ``side`` patch with traffic rescaled by area."""
    full = scfg.scenario(seed)
    edge = full.grid.area_bounds[2] * side / full.grid.shape[0]
    data = dict(scfg.data)
    data["area"] = {"edge_m": edge, "samples_per_side": side}
    t = dict(data["traffic"])
    t["total_bps"] = full.d_tot * (edge / full.grid.area_bounds[2]) ** 2
    t["file"] = None
    empty = not t["total_bps"] > 0.0
    if empty:
        t["total_bps"] = 1.0
    data["traffic"] = t
    data["n_bs"] = n_bs
    sc = cfgmod.ScenarioConfig(data, scfg.base_dir).scenario(seed)
    if empty:
        # keep an empty map empty so the divergence checks can report it
        sc = sc.with_traffic(tr.ScalarField(sc.grid, np.zeros(sc.grid.size)))
    return sc


def _check(name, fn):
    try:
        ok, detail = fn()
        return {"name": name, "passed": bool(ok), "detail": detail}
    except IREEError as exc:
        return {"name": name, "passed": False, "detail": {"error": type(exc).__name__, "message": str(exc)}}


def validate_checks(scfg, seed=0, grad_fn=None, n_grad=20):
    """Property suites of every module on a reduced copy of the scenario."""
    sc = reduced_scenario(scfg, seed)
    rng = np.random.default_rng(seed)
    checks = []

    def gradient():
        model = gr.LossModel(sc)
        worst = 0.0
        for i in range(n_grad):
            des = prop.random_design(
                sc.n_bs, sc.grid.area_bounds, sc.b_max * rng.uniform(0.5, 1.5), sc.p_max * rng.uniform(0.5, 1.5), rng,
                sc.loss_defaults,
            )
            eta = metrics.evaluate(des, sc).iree * rng.uniform(0.0, 2.0)
            res = gr.gradient_check(model, gr.ParamVector.from_design(des).values, eta, (0.0, 1.0, 100.0)[i % 3],
                                    grad_fn=grad_fn)
            worst = max(worst, res.max_rel_error)
        return worst <= 1e-5, {"max_rel_error": worst, "configs": n_grad}

    def divergence():
        d = sc.traffic
        des = prop.random_design(sc.n_bs, sc.grid.area_bounds, sc.b_max, sc.p_max, rng, sc.loss_defaults)
        c = metrics.capacity_field(des, sc)
        xi = metrics.js_divergence(c, d)
        sym = abs(xi - metrics.js_divergence(d, c))
        scaled = metrics.js_divergence(d, tr.ScalarField(sc.grid, 3.0 * d.values))
        ok = 0.0 <= xi <= 1.0 and sym <= 1e-12 and abs(scaled) <= 1e-12
        return ok, {"xi": xi, "asymmetry": sym, "scaled_copy": scaled}

    def dinkelbach():
        conf = dk.DinkelbachConfig(max_iterations=3, adam=AdamConfig(n_epoch=200))
        res = dk.solve(sc, conf, seed=seed, init=scfg.init)
        worst = 0.0
        for r in res.trace.records:
            des = prop.NetworkDesign.from_arrays(*gr.ParamLayout(sc.n_bs).split(r.params), sc.loss_defaults)
            f = metrics.given_iree_utility(des, sc, r.eta_next)
            worst = max(worst, abs(f) / max(sc.d_tot, 1e-300))
        ok = res.trace.monotonicity_violations == 0 and worst <= 1e-9
        return ok, {"violations": res.trace.monotonicity_violations, "max_fixed_point_residual": worst}

    def identity():
        des = prop.random_design(sc.n_bs, sc.grid.area_bounds, sc.b_max, sc.p_max, rng, sc.loss_defaults)
        r = metrics.evaluate(des, sc)
        expect = min(r.c_tot, r.d_tot) * (1.0 - r.xi) / r.p_t
        err = abs(r.iree - expect) / expect
        return err <= 1e-9, {"rel_error": err}

    def bounds():
        b = analysis.iree_bounds(sc, 0.0)
        return 0.0 < b.lower <= b.upper, b.to_dict()

    for name, fn in (
        ("gradient", gradient),
        ("divergence", divergence),
        ("dinkelbach", dinkelbach),
        ("iree_identity", identity),
        ("bounds", bounds),
    ):
        checks.append(_check(name, fn))
    return checks


def run_validate(cfg: RunConfig, grad_fn=None):
    scfg = cfg.load_scenario()
    os.makedirs(cfg.out, exist_ok=True)
    checks = validate_checks(scfg, cfg.seeds[0], grad_fn=grad_fn)
    passed = all(c["passed"] for c in checks)
    write_json({"scenario": scfg.name, "seed": cfg.seeds[0], "passed": passed, "checks": checks},
               os.path.join(cfg.out, "validate.json"))
    return (EXIT_OK if passed else EXIT_CHECK_FAILED), checks
