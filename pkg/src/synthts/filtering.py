"""Online validation of generated rows and the diversity-based stopping rule.

Rows are rejected when any value is missing, when the 4-decimal-rounded value
tuple duplicates an original or previously accepted row, or when any
channel's squared L2 norm falls outside the IQR band of the accepted norms.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import DataError
from .embedding import EmbeddingTable
from .textcodec import ParsedRow

ROUND_DECIMALS = 4


class RejectReason(str, enum.Enum):
    MISSING = "missing"
    DUPLICATE = "duplicate"
    NORM = "norm"


class StopDecision(str, enum.Enum):
    CONTINUE = "continue"
    COLLAPSE = "stop-collapse"
    CAP = "stop-cap"
    TARGET = "stop-target"


def norm_bounds(norms) -> tuple[float, float]:
    """[q1 - 3*IQR, q3 + 3*IQR] with linear-interpolation quartiles."""
    arr = np.asarray(list(norms), dtype=np.float64)
    if arr.size < 4:
        raise DataError("need at least 4 norms to compute bounds")
    q1, q3 = np.quantile(arr, [0.25, 0.75])
    iqr = q3 - q1
    return float(q1 - 3.0 * iqr), float(q3 + 3.0 * iqr)


def _row_key(values: np.ndarray) -> tuple:
    return tuple(np.round(values, ROUND_DECIMALS).tolist())


@dataclass
class FilterState:
    """Single-writer accumulator seeded from the original embedding table."""

    channel_spans: tuple[tuple[str, int, int], ...]
    channel_norms: list[list[float]]            # originals + accepted, per channel
    seen_keys: set = field(default_factory=set)
    gen_norms: list[list[float]] = field(default_factory=list)  # accepted generated only
    accepted_rows: list[np.ndarray] = field(default_factory=list)
    nan_count: int = 0
    dup_count: int = 0
    norm_reject_count: int = 0

    @classmethod
    def from_table(cls, table: EmbeddingTable) -> "FilterState":
        spans = tuple(table.channel_spans)
        norms = []
        for _, start, k in spans:
            block = table.values[:, start : start + k]
            norms.append(list(np.sum(block**2, axis=1)))
        keys = {_row_key(row) for row in table.values}
        return cls(spans, norms, keys, [[] for _ in spans])

    @property
    def accepted_count(self) -> int:
        return len(self.accepted_rows)

    @property
    def width(self) -> int:
        return sum(k for _, _, k in self.channel_spans)

    def channel_sq_norms(self, values: np.ndarray) -> np.ndarray:
        return np.array(
            [float(np.sum(values[start : start + k] ** 2))
             for _, start, k in self.channel_spans]
        )

    def accepted_table(self) -> EmbeddingTable:
        if not self.accepted_rows:
            raise DataError("no accepted rows")
        return EmbeddingTable(np.vstack(self.accepted_rows), self.channel_spans)


@dataclass(frozen=True)
class BatchDisposition:
    accepted: tuple[int, ...]                     # batch indices
    rejected: tuple[tuple[int, RejectReason], ...]
    norm_stats: tuple[tuple[float, float], ...]   # per-channel (mean, max) of candidate norms

    @property
    def counts(self) -> dict:
        c = {r.value: 0 for r in RejectReason}
        for _, reason in self.rejected:
            c[reason.value] += 1
        c["accepted"] = len(self.accepted)
        return c


def filter_batch(rows: list[ParsedRow], state: FilterState) -> BatchDisposition:
    """Apply missing / duplicate / norm filters in deterministic row order.

    Norm bounds are computed once from the pre-batch state; accepted rows are
    committed to the state (norms, dedup keys) as they are accepted, so
    within-batch duplicates are caught.
    """
    bounds = [norm_bounds(state.channel_norms[c]) for c in range(len(state.channel_spans))]
    accepted: list[int] = []
    rejected: list[tuple[int, RejectReason]] = []
    all_norms: list[np.ndarray] = []
    for idx, row in enumerate(rows):
        if row.values.size != state.width:
            rejected.append((idx, RejectReason.MISSING))
            state.nan_count += 1
            continue
        if not row.is_complete:
            rejected.append((idx, RejectReason.MISSING))
            state.nan_count += 1
            continue
        key = _row_key(row.values)
        if key in state.seen_keys:
            rejected.append((idx, RejectReason.DUPLICATE))
            state.dup_count += 1
            continue
        norms = state.channel_sq_norms(row.values)
        all_norms.append(norms)
        if any(n < lo or n > hi for n, (lo, hi) in zip(norms, bounds)):
            rejected.append((idx, RejectReason.NORM))
            state.norm_reject_count += 1
            continue
        accepted.append(idx)
        state.seen_keys.add(key)
        state.accepted_rows.append(row.values.copy())
        for c, n in enumerate(norms):
            state.channel_norms[c].append(float(n))
            state.gen_norms[c].append(float(n))
    if all_norms:
        mat = np.vstack(all_norms)
        stats = tuple((float(m), float(x)) for m, x in zip(mat.mean(axis=0), mat.max(axis=0)))
    else:
        stats = tuple((float("nan"), float("nan")) for _ in state.channel_spans)
    return BatchDisposition(tuple(accepted), tuple(rejected), stats)


def diversity_score(state: FilterState) -> np.ndarray:
    """Per channel: unique 4-decimal-rounded accepted norms over the
    generated count. Reported as 1.0 before anything is accepted."""
    n = state.accepted_count
    if n == 0:
        return np.ones(len(state.channel_spans))
    out = np.empty(len(state.channel_spans))
    for c, norms in enumerate(state.gen_norms):
        unique = len({round(v, ROUND_DECIMALS) for v in norms})
        out[c] = unique / n
    return out


def should_stop(
    state: FilterState,
    stop_threshold: float,
    max_count: int,
    target_count: int | None = None,
) -> StopDecision:
    """Collapse when max channel diversity drops below the threshold; cap
    when the generated count exceeds ``max_count``; target when a fixed
    count is requested and reached."""
    n = state.accepted_count
    if n >= 1 and float(np.max(diversity_score(state))) < stop_threshold:
        return StopDecision.COLLAPSE
    if n > max_count:
        return StopDecision.CAP
    if target_count is not None and n >= target_count:
        return StopDecision.TARGET
    return StopDecision.CONTINUE
