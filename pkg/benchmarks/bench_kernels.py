"""Time the compiled fictitious-play kernel against the pure-Python fallback.

    python benchmarks/bench_kernels.py --steps 20000 --repeats 5
"""

import argparse
import time

import numpy as np

from costadv import _kernels_py

try:
    from costadv import _kernels
except ImportError:
    _kernels = None


def run(impl, values, steps):
    rows, cols = values.shape
    row_cum, col_cum = np.zeros(rows), np.zeros(cols)
    row_counts, col_counts = np.zeros(rows, dtype=np.int64), np.zeros(cols, dtype=np.int64)
    t = time.perf_counter()
    impl.fictitious_play_steps(values, row_cum, col_cum, row_counts, col_counts, steps)
    return time.perf_counter() - t, row_counts, col_counts


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--shape", default="4x6", help="payoff matrix shape, ROWSxCOLS")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rows, cols = map(int, args.shape.split("x"))
    values = np.random.default_rng(args.seed).uniform(0, 10, size=(rows, cols))

    impls = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels is not None else [])
    best, counts = {}, {}
    for name, impl in impls:
        times = []
        for _ in range(args.repeats):
            dt, rc, cc = run(impl, values, args.steps)
            times.append(dt)
        best[name], counts[name] = min(times), (rc, cc)
        print(f"{name:7s} {args.steps} steps on {rows}x{cols}: {1e6 * best[name] / args.steps:8.3f} us/step")
    if "cython" in best:
        same = all(np.array_equal(a, b) for a, b in zip(counts["python"], counts["cython"]))
        print(f"speedup {best['python'] / best['cython']:.1f}x, identical play counts: {same}")
    else:
        print("compiled kernels not built; only the fallback was timed")


if __name__ == "__main__":
    main()
