"""Time the pure-Python kernels against the compiled ones and check they agree.

    python benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from geonav import _fallback

try:
    from geonav import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    cost = rng.random((200, 200)) * (rng.random((200, 200)) < 0.3)
    n = 256 * 50  # one MPPI iteration: population x horizon poses
    poses = (rng.uniform(0, 8, n), rng.uniform(0, 8, n), rng.uniform(-np.pi, np.pi, n))
    free = rng.random((200, 200)) > 0.25
    free[100, 100] = True
    return {
        "footprint_sum 12800 poses": lambda k: k.footprint_sum(*poses, k.row_prefix(cost), 0.04, 0.45, 0.30, 1e5),
        "geodesic_field 200x200": lambda k: k.geodesic_field(free, 100, 100, 0.04),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speed-up':>9s}  agree")
    for name, run in cases(rng).items():
        t_py, out_py = best_of(lambda: run(_fallback), args.repeat)
        if _kernels is None:
            print(f"{name:28s} {1e3 * t_py:12.1f} {'n/a':>14s} {'n/a':>9s}  n/a")
            continue
        t_c, out_c = best_of(lambda: run(_kernels), args.repeat)
        agree = np.array_equal(np.asarray(out_py), np.asarray(out_c))
        print(f"{name:28s} {1e3 * t_py:12.1f} {1e3 * t_c:14.2f} {t_py / t_c:8.1f}x  {agree}")


if __name__ == "__main__":
    main()
