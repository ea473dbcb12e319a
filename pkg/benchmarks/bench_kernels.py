"""Compare the numba and pure-numpy DTW kernels.

Run both paths in one process by calling the private implementations
directly; the public dispatch is timed under whichever path the
SYNTHTS_DISABLE_NUMBA environment variable selected at import.

Usage: python3 benchmarks/bench_kernels.py [--sizes 100,250,500] [--pairs 30]
"""

import argparse
import time

import numpy as np

from synthts import _kernels


def time_call(fn, *args, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="100,250,500",
                    help="comma-separated series lengths")
    ap.add_argument("--pairs", type=int, default=30,
                    help="instances per set for the nearest-neighbour sweep")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)

    if _kernels.NUMBA_DISABLED:
        print("numba disabled via SYNTHTS_DISABLE_NUMBA; numpy-only run")
    else:
        # trigger JIT compilation outside the timed region
        _kernels._dtw_numba(np.zeros(4), np.zeros(4), 4)
        _kernels._min_dtw_numba(np.zeros((2, 4)), np.zeros((2, 4)), 4)

    print(f"{'L':>6} {'kernel':>22} {'numpy (s)':>12} {'numba (s)':>12} {'speedup':>9}")
    for L in sizes:
        x, y = rng.normal(size=L), rng.normal(size=L)
        t_np = time_call(_kernels._dtw_numpy, x, y, L)
        if _kernels.NUMBA_DISABLED:
            print(f"{L:>6} {'dtw_distance':>22} {t_np:>12.5f} {'-':>12} {'-':>9}")
        else:
            t_nb = time_call(_kernels._dtw_numba, x, y, L)
            print(f"{L:>6} {'dtw_distance':>22} {t_np:>12.5f} {t_nb:>12.5f} "
                  f"{t_np / t_nb:>8.1f}x")

        gen = rng.normal(size=(args.pairs, L))
        orig = rng.normal(size=(args.pairs, L))
        t_np = time_call(_kernels._min_dtw_numpy, gen, orig, L, repeats=1)
        if _kernels.NUMBA_DISABLED:
            print(f"{L:>6} {'min_dtw_distances':>22} {t_np:>12.5f} {'-':>12} {'-':>9}")
        else:
            t_nb = time_call(_kernels._min_dtw_numba, gen, orig, L, repeats=1)
            print(f"{L:>6} {'min_dtw_distances':>22} {t_np:>12.5f} {t_nb:>12.5f} "
                  f"{t_np / t_nb:>8.1f}x")

    # correctness cross-check between the two paths
    x, y = rng.normal(size=200), rng.normal(size=200)
    a = _kernels._dtw_numpy(x, y, 200)
    if not _kernels.NUMBA_DISABLED:
        b = float(_kernels._dtw_numba(x, y, 200))
        assert abs(a - b) < 1e-10, (a, b)
        print(f"\ncross-check: |numpy - numba| = {abs(a - b):.2e}")


if __name__ == "__main__":
    main()
