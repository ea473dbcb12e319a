"""ACF-based periodicity estimation and minimally-overlapping windowing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError, InstanceSet, RawSeries


class NoPeriodicityError(Exception):
    """No ACF peak clears the significance band; caller falls back to the
    unadjusted stride."""


@dataclass(frozen=True)
class SegmentationPlan:
    length: int
    n_windows: int
    period: int | None
    step: int
    offsets: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "n_windows": self.n_windows,
            "period": self.period,
            "step": self.step,
            "offsets": list(self.offsets),
        }


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample ACF: mean-removed, normalized by the lag-0 autocovariance.

    Returns lags 0..max_lag; acf[0] == 1.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n < 2 * max_lag:
        raise DataError("series too short for requested max_lag")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        raise DataError("zero variance series has no autocorrelation")
    # FFT-based autocovariance, biased normalization.
    nfft = 1 << int(np.ceil(np.log2(2 * n - 1)))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return acov / denom


def estimate_period(series: np.ndarray, window_length: int) -> int:
    """Lag of the highest significant local ACF maximum with
    2 <= lag < window_length / 2.

    Significance: the peak value must exceed the white-noise band 2/sqrt(L0).
    Raises :class:`NoPeriodicityError` when no peak qualifies.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    lag_cap = int(np.ceil(window_length / 2))
    max_lag = min(lag_cap, n // 2)
    acf = autocorrelation(x, max_lag)
    threshold = 2.0 / np.sqrt(n)
    best_lag, best_val = None, -np.inf
    for lag in range(2, max_lag):
        if lag >= window_length / 2:
            break
        if acf[lag] > acf[lag - 1] and acf[lag] >= acf[lag + 1] and acf[lag] > threshold:
            if acf[lag] > best_val:
                best_lag, best_val = lag, acf[lag]
    if best_lag is None:
        raise NoPeriodicityError("no significant ACF peak found")
    return best_lag


def _adjust_step(raw_step: int, period: int, total_len: int, length: int, n_windows: int) -> int:
    """Snap the raw stride to the nearest multiple of the period (ties low);
    if the snapped stride overflows, fall back to the largest multiple that
    fits, else to the raw stride."""
    lower = (raw_step // period) * period
    upper = lower + period
    if lower < 1:
        step = upper
    elif (raw_step - lower) <= (upper - raw_step):
        step = lower
    else:
        step = upper
    if (n_windows - 1) * step + length <= total_len:
        return step
    max_mult = (total_len - length) // (n_windows - 1) // period
    if max_mult >= 1:
        return max_mult * period
    return raw_step


def plan_segmentation(
    total_len: int, length: int, n_windows: int, period: int | None
) -> SegmentationPlan:
    if length >= total_len:
        raise DataError("window length must be shorter than the series")
    if n_windows < 2:
        raise DataError("need at least 2 windows")
    raw_step = max(1, (total_len - length) // (n_windows - 1))
    step = raw_step
    if period is not None:
        step = _adjust_step(raw_step, period, total_len, length, n_windows)
    if (n_windows - 1) * step + length > total_len:
        step = max(1, (total_len - length) // (n_windows - 1))
    if (n_windows - 1) * step + length > total_len:
        raise DataError("windows do not fit even at stride 1")
    offsets = tuple(i * step for i in range(n_windows))
    return SegmentationPlan(length, n_windows, period, step, offsets)


def segment(
    series: RawSeries,
    length: int,
    n_windows: int,
    period: int | str | None = "auto",
) -> tuple[InstanceSet, SegmentationPlan]:
    """Extract ``n_windows`` windows of ``length`` samples at a periodicity-
    aligned stride.

    ``period`` may be an explicit int, ``"auto"`` (estimate from the first
    channel's ACF, falling back to the unadjusted stride when nothing is
    significant), or ``None`` to skip period alignment.
    """
    if period == "auto":
        try:
            period = estimate_period(series.values[0], length)
        except (NoPeriodicityError, DataError):
            period = None
    plan = plan_segmentation(series.length, length, n_windows, period)
    data = np.stack(
        [series.values[:, off : off + length] for off in plan.offsets], axis=0
    )
    return InstanceSet(data, series.channel_names, plan.offsets), plan
