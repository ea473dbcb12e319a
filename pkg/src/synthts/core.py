"""Core data containers: raw series, instance sets, per-timestep scaling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

EPS_STD = 1e-8


class DataError(ValueError):
    """Malformed input data (CSV parse failures, shape violations)."""


@dataclass(frozen=True)
class RawSeries:
    """A multichannel series: ``values`` has shape (C, L0)."""

    channel_names: tuple[str, ...]
    values: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[1] < 2:
            raise DataError("values must be (C, L0) with L0 >= 2")
        if len(self.channel_names) != v.shape[0]:
            raise DataError("channel name count does not match value rows")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise DataError("channel names must be unique")
        if not np.all(np.isfinite(v)):
            raise DataError("series values must be finite")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps)
            if ts.shape != (v.shape[1],):
                raise DataError("timestamp length mismatch")
            if np.any(np.diff(ts.astype(np.float64)) <= 0):
                raise DataError("timestamps must be strictly increasing")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class InstanceSet:
    """A set of fixed-length windows: ``data`` has shape (I, C, L)."""

    data: np.ndarray
    channel_names: tuple[str, ...]
    origin_offsets: tuple[int, ...] | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", d)
        if d.ndim != 3:
            raise DataError("data must be (I, C, L)")
        i, c, l = d.shape
        if i < 1 or c < 1 or l < 2:
            raise DataError("need I >= 1, C >= 1, L >= 2")
        if len(self.channel_names) != c:
            raise DataError("channel name count does not match data")
        if not np.all(np.isfinite(d)):
            raise DataError("instance values must be finite")
        if self.origin_offsets is not None and len(self.origin_offsets) != i:
            raise DataError("origin_offsets length mismatch")

    @property
    def n_instances(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def length(self) -> int:
        return self.data.shape[2]

    def channel(self, c: int) -> np.ndarray:
        """All instances of one channel, shape (I, L)."""
        return self.data[:, c, :]


@dataclass(frozen=True)
class ScalerState:
    """Per-timestep mean/std (sample std, ddof=1) for each channel; (C, L)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        s = np.asarray(self.std, dtype=np.float64)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)
        if m.shape != s.shape or m.ndim != 2:
            raise DataError("mean/std must share shape (C, L)")
        if np.any(s < 0):
            raise DataError("std entries must be non-negative")

    @property
    def zero_std_mask(self) -> np.ndarray:
        return self.std == 0.0

    @property
    def safe_std(self) -> np.ndarray:
        return np.maximum(self.std, EPS_STD)


def load_dataset(path, columns: list[str] | None = None) -> RawSeries:
    """Load a wide-layout CSV: optional leading ``timestamp`` column, one
    channel per remaining column, header row required.

    ``columns`` selects a subset of channel columns by name (default: all).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("no data rows") from None
        header = [h.strip() for h in header]
        has_ts = bool(header) and header[0].lower() == "timestamp"
        names = header[1:] if has_ts else header
        if not names:
            raise DataError("no channel columns in header")
        if columns is not None:
            missing = [c for c in columns if c not in names]
            if missing:
                raise DataError(f"unknown columns: {missing}")
            sel = [names.index(c) for c in columns]
            names_out = list(columns)
        else:
            sel = list(range(len(names)))
            names_out = names
        rows: list[list[float]] = []
        ts: list[str] = []
        width = len(header)
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataError(f"row {rownum}: expected {width} cells, got {len(row)}")
            cells = row[1:] if has_ts else row
            if has_ts:
                ts.append(row[0])
            vals = []
            for j in sel:
                cell = cells[j].strip()
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"non-numeric value at row {rownum}, column '{names[j]}'"
                    ) from None
            rows.append(vals)
    if not rows:
        raise DataError("no data rows")
    values = np.asarray(rows, dtype=np.float64).T
    timestamps = None
    if has_ts:
        try:
            timestamps = np.asarray([float(t) for t in ts])
        except ValueError:
            timestamps = np.arange(len(ts), dtype=np.float64)
    return RawSeries(tuple(names_out), values, timestamps)


def fit_scaler(x: InstanceSet) -> ScalerState:
    """Per-timestep standard-scaling statistics across instances."""
    if x.n_instances < 2:
        raise DataError("need at least 2 instances to fit a scaler")
    mean = x.data.mean(axis=0)
    std = x.data.std(axis=0, ddof=1)
    return ScalerState(mean, std)


def apply_scaler(x: InstanceSet, s: ScalerState) -> InstanceSet:
    if s.mean.shape != x.data.shape[1:]:
        raise DataError("scaler shape does not match instance set")
    scaled = (x.data - s.mean[None]) / s.safe_std[None]
    return InstanceSet(scaled, x.channel_names, x.origin_offsets)


def invert_scaler(x: InstanceSet, s: ScalerState) -> InstanceSet:
    if s.mean.shape != x.data.shape[1:]:
        raise DataError("scaler shape does not match instance set")
    raw = x.data * s.safe_std[None] + s.mean[None]
    return InstanceSet(raw, x.channel_names, x.origin_offsets)
