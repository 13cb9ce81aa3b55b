"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--paths N] [--repeat R]
"""
import argparse
import time

import numpy as np

from bsdemeasure import _backend


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    n = args.paths
    cases = {
        "normal_block (n x 200)": lambda b: _backend.normal_block(1, 0, n, 0, 200, backend=b),
        "first_passage (slope 1, dt 1e-2)": lambda b: _backend.first_passage(
            1, 0, n, 1e-2, 3000, 1.0, np.array([-1.0]), np.array([0.0]), True, backend=b),
    }
    print(f"{'kernel':36s} {'python s':>10s} {'compiled s':>11s} {'speed-up':>9s}")
    for name, fn in cases.items():
        py = best_of(lambda: fn("python"), args.repeat)
        if "compiled" in _backend.available():
            cc = best_of(lambda: fn("compiled"), args.repeat)
            print(f"{name:36s} {py:10.3f} {cc:11.3f} {py / cc:9.1f}")
        else:
            print(f"{name:36s} {py:10.3f} {'n/a':>11s} {'':>9s}")


if __name__ == "__main__":
    main()
