import functools
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ireeopt import dinkelbach as dk  # noqa: E402
from ireeopt import metrics, traffic  # noqa: E402
from ireeopt.trainer import AdamConfig  # noqa: E402

DESK_EDGE = 5000.0
DESK_SIDE = 36


@functools.lru_cache(maxsize=None)
def desk_grid():
    return traffic.make_grid(DESK_EDGE, DESK_SIDE)


@functools.lru_cache(maxsize=None)
def desk_scenario(seed=0, p_max=1000.0, preset="rural", b_max=36e9):
    from ireeopt import config

    return config.preset(preset).scenario(seed, p_max_dbw=10.0 * np.log10(p_max), b_max_hz=b_max)


def small_scenario(seed=0, n_bs=5, side=7, p_max=10.0, b_max=36e9, zeta_min=0.8, measure="area"):
    """5 stations over 7x7 samples (49), traffic total scaled with the area."""
    edge = DESK_EDGE * side / DESK_SIDE
    grid = traffic.make_grid(edge, side)
    d = traffic.lognormal_traffic(grid, 19.0, 2.8, 0.0012, 8.9e12 * (edge / DESK_EDGE) ** 2, seed=seed)
    return metrics.Scenario(grid, d, b_max=b_max, p_max=p_max, n_bs=n_bs, zeta_min=zeta_min, capacity_measure=measure)


def quick_config(n_epoch=200, max_iterations=4, **kw):
    return dk.DinkelbachConfig(max_iterations=max_iterations, adam=AdamConfig(n_epoch=n_epoch), **kw)


@pytest.fixture
def small():
    return small_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    if rep.when == "call" or rep.failed:
        _CRITERIA[n] = (title, rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcome = _CRITERIA[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {title}")
