"""Hot numeric kernels with numba-accelerated and pure-numpy variants.

The numba path is the default. Setting the environment variable
``SYNTHTS_DISABLE_NUMBA=1`` (before import) selects the pure-numpy
fallback, which computes identical results. ``benchmarks/bench_kernels.py``
compares the two.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("SYNTHTS_DISABLE_NUMBA", "") not in ("", "0")

if not NUMBA_DISABLED:
    try:
        import numba as nb
    except ImportError:  # pragma: no cover
        nb = None
        NUMBA_DISABLED = True
else:
    nb = None


def _dtw_numpy(x: np.ndarray, y: np.ndarray, band: int) -> float:
    # Row-wise DP; squared local cost, sqrt at the end so that the
    # identity-alignment path bounds the result by the Euclidean distance.
    n, m = len(x), len(y)
    inf = np.inf
    prev = np.full(m + 1, inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        lo = max(1, i - band)
        hi = min(m, i + band)
        cur = np.full(m + 1, inf)
        cost = (x[i - 1] - y[lo - 1 : hi]) ** 2
        # cur[j] = cost + min(prev[j], prev[j-1], cur[j-1]); the cur[j-1]
        # dependency forces a left-to-right scan.
        best_prev = np.minimum(prev[lo:hi + 1], prev[lo - 1 : hi])
        left = inf
        for k in range(hi - lo + 1):
            left = cost[k] + min(best_prev[k], left)
            cur[lo + k] = left
        prev = cur
    return float(np.sqrt(prev[m]))


def _min_dtw_numpy(gen: np.ndarray, orig: np.ndarray, band: int) -> np.ndarray:
    out = np.empty(gen.shape[0])
    for i in range(gen.shape[0]):
        best = np.inf
        for j in range(orig.shape[0]):
            d = _dtw_numpy(gen[i], orig[j], band)
            if d < best:
                best = d
        out[i] = best
    return out


if nb is not None:

    @nb.njit(cache=True)
    def _dtw_numba(x, y, band):  # pragma: no cover - exercised via dispatch
        n = x.shape[0]
        m = y.shape[0]
        inf = np.inf
        prev = np.full(m + 1, inf)
        prev[0] = 0.0
        cur = np.empty(m + 1)
        for i in range(1, n + 1):
            lo = max(1, i - band)
            hi = min(m, i + band)
            for j in range(m + 1):
                cur[j] = inf
            for j in range(lo, hi + 1):
                d = x[i - 1] - y[j - 1]
                c = d * d
                best = prev[j]
                if prev[j - 1] < best:
                    best = prev[j - 1]
                if cur[j - 1] < best:
                    best = cur[j - 1]
                cur[j] = c + best
            for j in range(m + 1):
                prev[j] = cur[j]
        return np.sqrt(prev[m])

    @nb.njit(parallel=True, cache=True)
    def _min_dtw_numba(gen, orig, band):  # pragma: no cover
        out = np.empty(gen.shape[0])
        for i in nb.prange(gen.shape[0]):
            best = np.inf
            for j in range(orig.shape[0]):
                d = _dtw_numba(gen[i], orig[j], band)
                if d < best:
                    best = d
            out[i] = best
        return out


def dtw_distance(x: np.ndarray, y: np.ndarray, band: int | None = None) -> float:
    """DTW distance between two 1-D series.

    Local cost is the squared difference and the accumulated path cost is
    square-rooted, so ``dtw_distance(x, y) <= euclidean(x, y)`` whenever the
    series have equal length. ``band`` is the Sakoe-Chiba half-width; ``None``
    means unconstrained.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    b = max(len(x), len(y)) if band is None else int(band)
    if b < abs(len(x) - len(y)):
        raise ValueError("band too narrow for series of unequal length")
    if NUMBA_DISABLED:
        return _dtw_numpy(x, y, b)
    return float(_dtw_numba(x, y, b))


def min_dtw_distances(gen: np.ndarray, orig: np.ndarray, band: int | None = None) -> np.ndarray:
    """Distance from each row of ``gen`` to its nearest row of ``orig``."""
    gen = np.ascontiguousarray(gen, dtype=np.float64)
    orig = np.ascontiguousarray(orig, dtype=np.float64)
    b = max(gen.shape[1], orig.shape[1]) if band is None else int(band)
    if NUMBA_DISABLED:
        return _min_dtw_numpy(gen, orig, b)
    return _min_dtw_numba(gen, orig, b)
