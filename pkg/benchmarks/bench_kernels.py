"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times the hot kernels on toy-sized inputs and one short MCMC run with each
backend, and checks that both backends agree.
"""
import argparse
import time

import numpy as np

from diffsurv import kernels, models, survival
from diffsurv.mcmc import SamplerConfig, run_chain


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=300)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n = 2001
    t = np.linspace(0.0, 2.0, n)
    dt = np.diff(t)
    dw = np.sqrt(dt) * rng.standard_normal(n - 1)
    codes = np.array([kernels.SIN, kernels.CONST], dtype=np.int_)
    w = np.array([-1.4, -1.0])
    p = np.zeros(2)
    ev = rng.integers(0, 2, n).astype(np.int_)
    wt = rng.random(n)
    z = rng.standard_normal(n - 2)

    times, events = rng.uniform(0.05, 0.9, 200), rng.random(200) < 0.5
    data = survival.SurvivalDataset.from_arrays(times, events)
    cfg = SamplerConfig(iterations=args.iterations, burn_in=0, parametrization="ncp", seed=1)

    results = {}
    for name in ("cython", "python"):
        try:
            kernels.use_backend(name)
        except ImportError:
            print(f"{name:>7}: not available")
            continue
        x = np.empty(n)
        x[0] = 2.0

        def euler():
            kernels.euler_fill(x, 0, dt, dw, 1.0, codes, w, p, 0.0)

        def girsanov():
            kernels.girsanov_sum(x, dt, 0, n - 1, 1.0, codes, w, p, 0.0)

        def loglik():
            kernels.loglik_nodes(x, 0, n, ev, wt, kernels.H_SQUARE, 1.0)

        def bridge():
            b = np.empty(n)
            b[0], b[-1] = 0.0, 1.0
            kernels.bridge_fill(b, 0, n - 1, t, 1.0, z)

        row = {
            "euler_fill": _time(euler, args.repeat),
            "girsanov_sum": _time(girsanov, args.repeat),
            "loglik_nodes": _time(loglik, args.repeat),
            "bridge_fill": _time(bridge, args.repeat),
            "run_chain(ncp)": _time(lambda: run_chain(models.toy_model(), data, cfg), 1),
        }
        euler()
        row["_x"] = x.copy()
        results[name] = row

    kernels.use_backend(None)
    keys = [k for k in next(iter(results.values())) if not k.startswith("_")]
    print(f"{'kernel':<16}" + "".join(f"{b:>14}" for b in results) + ("     speedup" if len(results) == 2 else ""))
    for k in keys:
        vals = [results[b][k] for b in results]
        line = f"{k:<16}" + "".join(f"{v * 1e3:>12.3f}ms" for v in vals)
        if len(vals) == 2:
            line += f"{vals[1] / vals[0]:>11.1f}x"
        print(line)
    if len(results) == 2:
        diff = np.max(np.abs(results["cython"]["_x"] - results["python"]["_x"]))
        print(f"max |euler(cython) - euler(python)| = {diff:.3e}")


if __name__ == "__main__":
    main()
