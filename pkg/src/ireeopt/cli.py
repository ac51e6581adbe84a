"""``ireeopt`` command line."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import IREEError

log = logging.getLogger("ireeopt")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _hz_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _seeds(text):
    try:
        out = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if any(s < 0 or s >= 2**64 for s in out):
        raise argparse.ArgumentTypeError("seeds must fit in an unsigned 64-bit integer")
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="ireeopt", description="IREE-driven network planning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sweep=True):
        sp.add_argument("--scenario", default="rural", help="scenario YAML file or preset name (rural, urban)")
        sp.add_argument("--seed", type=_seeds, default=(0,), help="seed or comma-separated seeds")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--workers", type=int, default=1)
        if sweep:
            sp.add_argument("--pmax-dbw", type=_floats, default=(), help="P_max values in dBW")
            sp.add_argument("--bmax-hz", type=_hz_list, default=(), help="B_max values, SI suffixes allowed (36G)")
            sp.add_argument("--objective", default="iree", choices=("iree", "ee", "se"))
            sp.add_argument("--shadowing-db", type=float, default=None)
            sp.add_argument("--draws", type=int, default=100)

    for name, help_ in (
        ("optimize", "optimise one design per seed"),
        ("compare", "IREE, EE and SE designs side by side"),
        ("sweep", "optimise across a P_max or B_max sweep"),
        ("tradeoff", "IREE-SE trade-off with shadowed evaluation"),
    ):
        common(sub.add_parser(name, help=help_))
    common(sub.add_parser("gen-traffic", help="write traffic maps"), sweep=False)
    common(sub.add_parser("validate", help="run the invariant suite on a reduced scenario"), sweep=False)
    return p


def run_config(ns) -> harness.RunConfig:
    sh = None
    if getattr(ns, "shadowing_db", None) is not None:
        sh = harness.ShadowingSpec(ns.shadowing_db, ns.draws)
    return harness.RunConfig(
        scenario=ns.scenario,
        objective=getattr(ns, "objective", "iree"),
        seeds=ns.seed,
        out=ns.out,
        p_max_dbw=getattr(ns, "pmax_dbw", ()),
        b_max_hz=getattr(ns, "bmax_hz", ()),
        shadowing=sh,
        workers=ns.workers,
    )


def _code(result):
    return result[0] if isinstance(result, tuple) else result


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    runners = {
        "optimize": harness.run_optimize,
        "compare": harness.run_compare,
        "sweep": harness.run_sweep,
        "tradeoff": harness.run_tradeoff,
        "gen-traffic": harness.run_gen_traffic,
        "validate": harness.run_validate,
    }
    try:
        cfg = run_config(ns)
        code = _code(runners[ns.command](cfg))
    except IREEError as exc:
        print(f"ireeopt: error: {exc}", file=sys.stderr)
        return harness.EXIT_INPUT
    if code:
        log.warning("%s finished with exit code %d", ns.command, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
