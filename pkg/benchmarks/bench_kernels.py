"""Time the fused loss/gradient kernel on both backends.

    python benchmarks/bench_kernels.py [--side 36] [--n-bs 25] [--repeat 50]

Checks the two backends agree before timing; the numba number excludes JIT
compilation (one warm-up call).
"""

import argparse
import time

import numpy as np

from ireeopt import gradients as gr
from ireeopt import metrics, traffic
from ireeopt.trainer import initial_state


def build(side, n_bs):
    grid = traffic.make_grid(5000.0 * side / 36, side)
    d = traffic.lognormal_traffic(grid, 19, 2.8, 0.0012, 8.9e12, seed=0)
    sc = metrics.Scenario(grid, d, b_max=36e9, p_max=1000.0, n_bs=n_bs)
    return sc, initial_state(sc, 0).params


def bench(model, theta, eta, repeat):
    model.loss_and_grad(theta, eta, 100.0)  # warm-up / JIT
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        model.loss_and_grad(theta, eta, 100.0)
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), float(np.min(times))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--side", type=int, default=36)
    ap.add_argument("--n-bs", type=int, default=25)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    sc, theta = build(args.side, args.n_bs)
    eta = 1e10
    models = {b: gr.LossModel(sc, backend=b) for b in ("numba", "numpy")}
    (b_nb, g_nb), (b_np, g_np) = (models[b].loss_and_grad(theta, eta, 100.0) for b in ("numba", "numpy"))
    err = float(np.max(gr.relative_errors(g_nb, g_np)))
    print(f"grid {args.side}x{args.side}, {args.n_bs} stations; loss diff {abs(b_nb.total - b_np.total):.2e}, "
          f"max grad rel diff {err:.2e}")
    res = {b: bench(m, theta, eta, args.repeat) for b, m in models.items()}
    for b, (med, best) in res.items():
        print(f"{b:6s} median {med * 1e3:8.3f} ms   best {best * 1e3:8.3f} ms")
    print(f"speed-up (median) {res['numpy'][0] / res['numba'][0]:.2f}x")


if __name__ == "__main__":
    main()
