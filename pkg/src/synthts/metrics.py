"""Similarity metrics between original and generated instance sets, plus
min-max normalization and ranking across models."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._kernels import dtw_distance, min_dtw_distances
from .core import DataError, InstanceSet

FEATURE_METRICS = ("mdd", "acd", "sd", "kd")
DISTANCE_METRICS = ("ed", "dtw")
ALL_METRICS = FEATURE_METRICS + DISTANCE_METRICS


def _check_shapes(orig: InstanceSet, gen: InstanceSet):
    if orig.n_channels != gen.n_channels or orig.length != gen.length:
        raise DataError("original and generated sets must share C and L")


def mdd(orig: InstanceSet, gen: InstanceSet, bins: int | None = None) -> float:
    """Marginal distribution difference on the original data's bin grid.

    Per (channel, timestep): histogram proportions over instances; generated
    values outside the original range contribute no mass. Score is the mean
    absolute proportion difference over bins, timesteps and channels.
    """
    _check_shapes(orig, gen)
    if bins is None:
        bins = max(2, int(np.ceil(np.sqrt(orig.n_instances))))
    if bins < 2:
        raise DataError("need at least 2 bins")
    total = 0.0
    count = 0
    for c in range(orig.n_channels):
        o = orig.channel(c)
        g = gen.channel(c)
        for t in range(orig.length):
            ov = o[:, t]
            lo, hi = float(ov.min()), float(ov.max())
            if lo == hi:
                lo, hi = lo - 0.5, hi + 0.5
            edges = np.linspace(lo, hi, bins + 1)
            ho, _ = np.histogram(ov, bins=edges)
            hg, _ = np.histogram(g[:, t], bins=edges)
            po = ho / ov.size
            pg = hg / g.shape[0]
            total += float(np.mean(np.abs(po - pg)))
            count += 1
    return total / count


def _acf_1d(x: np.ndarray, max_lag: int) -> np.ndarray | None:
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        return None
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n - 1)))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    return acov / denom


def acd(orig: InstanceSet, gen: InstanceSet, max_lag: int | None = None) -> float:
    """Mean absolute difference between instance-averaged ACFs over lags
    1..max_lag (default L // 2), averaged over channels."""
    _check_shapes(orig, gen)
    if max_lag is None:
        max_lag = orig.length // 2
    if max_lag >= orig.length:
        raise DataError("max_lag must be below the instance length")
    scores = []
    for c in range(orig.n_channels):
        curves = []
        for block in (orig.channel(c), gen.channel(c)):
            acfs = [a for a in (_acf_1d(row, max_lag) for row in block) if a is not None]
            if not acfs:
                curves = None
                break
            curves.append(np.mean(acfs, axis=0))
        if curves is None:
            warnings.warn(
                f"channel {orig.channel_names[c]} is constant; skipped in ACD",
                stacklevel=2,
            )
            continue
        scores.append(float(np.mean(np.abs(curves[0][1:] - curves[1][1:]))))
    if not scores:
        raise DataError("all channels constant; ACD undefined")
    return float(np.mean(scores))


def _pooled_moment(values: np.ndarray, order: int) -> float:
    m = values.mean()
    s = values.std(ddof=0)
    if s == 0.0:
        raise DataError("zero pooled variance")
    return float(np.mean((values - m) ** order) / s**order)


def sd(orig: InstanceSet, gen: InstanceSet) -> float:
    """Absolute pooled-skewness difference, channel-mean."""
    return _moment_diff(orig, gen, 3)


def kd(orig: InstanceSet, gen: InstanceSet) -> float:
    """Absolute pooled-kurtosis (non-excess) difference, channel-mean."""
    return _moment_diff(orig, gen, 4)


def _moment_diff(orig: InstanceSet, gen: InstanceSet, order: int) -> float:
    _check_shapes(orig, gen)
    diffs = []
    for c in range(orig.n_channels):
        ov = orig.channel(c).ravel()
        gv = gen.channel(c).ravel()
        if min(ov.size, gv.size) < 4:
            raise DataError("need at least 4 pooled values per channel")
        diffs.append(abs(_pooled_moment(gv, order) - _pooled_moment(ov, order)))
    return float(np.mean(diffs))


def ed(orig: InstanceSet, gen: InstanceSet, paired: bool = False) -> float:
    """Euclidean distance from each generated series to its nearest original
    (or its index-paired original when ``paired``), averaged over generated
    series and channels."""
    _check_shapes(orig, gen)
    dists = []
    for c in range(orig.n_channels):
        o = orig.channel(c)
        g = gen.channel(c)
        if paired:
            if o.shape[0] != g.shape[0]:
                raise DataError("paired mode requires equal instance counts")
            d = np.linalg.norm(g - o, axis=1)
        else:
            # Nearest neighbour via the expanded square, then an exact
            # recomputation of the winning distance (the expansion loses
            # precision near zero).
            cross = g @ o.T
            sq = (g**2).sum(axis=1)[:, None] + (o**2).sum(axis=1)[None, :] - 2 * cross
            nearest = np.argmin(sq, axis=1)
            d = np.linalg.norm(g - o[nearest], axis=1)
        dists.append(d.mean())
    return float(np.mean(dists))


def dtw(orig: InstanceSet, gen: InstanceSet, band: int | None = None,
        paired: bool = False) -> float:
    """DTW distance (squared local cost, square-rooted path total) from each
    generated series to its nearest original, averaged as in ``ed``."""
    _check_shapes(orig, gen)
    dists = []
    for c in range(orig.n_channels):
        o = orig.channel(c)
        g = gen.channel(c)
        if paired:
            if o.shape[0] != g.shape[0]:
                raise DataError("paired mode requires equal instance counts")
            d = np.array([dtw_distance(gi, oi, band) for gi, oi in zip(g, o)])
        else:
            d = min_dtw_distances(g, o, band)
        dists.append(d.mean())
    return float(np.mean(dists))


_METRIC_FNS = {
    "mdd": mdd,
    "acd": acd,
    "sd": sd,
    "kd": kd,
    "ed": ed,
    "dtw": dtw,
}


@dataclass(frozen=True)
class MetricReport:
    scores: dict                       # metric -> channel-mean score
    per_channel: dict                  # metric -> list per channel
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scores": self.scores,
            "per_channel": self.per_channel,
            "metadata": self.metadata,
        }


def compute_report(
    orig: InstanceSet,
    gen: InstanceSet,
    metrics: tuple[str, ...] = ALL_METRICS,
    bins: int | None = None,
    max_lag: int | None = None,
    band: int | None = None,
    paired: bool = False,
) -> MetricReport:
    scores: dict[str, float] = {}
    per_channel: dict[str, list[float]] = {}
    for name in metrics:
        if name not in _METRIC_FNS:
            raise DataError(f"unknown metric {name!r}")
        chan_scores = []
        for c in range(orig.n_channels):
            o1 = InstanceSet(orig.data[:, c : c + 1, :], (orig.channel_names[c],))
            g1 = InstanceSet(gen.data[:, c : c + 1, :], (gen.channel_names[c],))
            kwargs = {}
            if name == "mdd":
                kwargs["bins"] = bins
            elif name == "acd":
                kwargs["max_lag"] = max_lag
            elif name == "ed":
                kwargs["paired"] = paired
            elif name == "dtw":
                kwargs.update(band=band, paired=paired)
            chan_scores.append(_METRIC_FNS[name](o1, g1, **kwargs))
        per_channel[name] = chan_scores
        scores[name] = float(np.mean(chan_scores))
    meta = {
        "bins": bins if bins is not None else f"ceil(sqrt(I))={max(2, int(np.ceil(np.sqrt(orig.n_instances))))}",
        "max_lag": max_lag if max_lag is not None else orig.length // 2,
        "band": band,
        "pairing": "index-paired" if paired else "nearest-original",
        "n_original": orig.n_instances,
        "n_generated": gen.n_instances,
    }
    return MetricReport(scores, per_channel, meta)


@dataclass(frozen=True)
class ComparisonTable:
    models: tuple[str, ...]
    metrics: tuple[str, ...]
    raw: np.ndarray                    # (models, metrics)
    normalized: np.ndarray             # (models, metrics), min-max in [0, 1]
    feature_avg: np.ndarray
    distance_avg: np.ndarray
    average_rank: np.ndarray

    def to_csv(self, path) -> None:
        header = (
            ["model"] + list(self.metrics)
            + ["feature_norm_avg", "distance_norm_avg", "average_rank"]
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for i, m in enumerate(self.models):
                cells = [m] + [f"{v:.6g}" for v in self.raw[i]] + [
                    f"{self.feature_avg[i]:.6g}",
                    f"{self.distance_avg[i]:.6g}",
                    f"{self.average_rank[i]:.6g}",
                ]
                fh.write(",".join(cells) + "\n")


def normalize_and_rank(raw_scores: dict) -> ComparisonTable:
    """Min-max normalize per metric across models (all-equal maps to 0),
    average within feature/distance groups, and average tie-split ranks."""
    models = tuple(raw_scores)
    if len(models) < 2:
        raise DataError("need at least 2 models to compare")
    metric_sets = [tuple(sorted(v)) for v in raw_scores.values()]
    if len(set(metric_sets)) != 1:
        raise DataError("models report inconsistent metric sets")
    metrics = tuple(sorted(raw_scores[models[0]], key=lambda m: (
        ALL_METRICS.index(m) if m in ALL_METRICS else len(ALL_METRICS)
    )))
    raw = np.array([[raw_scores[m][k] for k in metrics] for m in models])
    span = raw.max(axis=0) - raw.min(axis=0)
    normalized = np.where(span > 0, (raw - raw.min(axis=0)) / np.where(span == 0, 1, span), 0.0)
    feat_cols = [i for i, m in enumerate(metrics) if m in FEATURE_METRICS]
    dist_cols = [i for i, m in enumerate(metrics) if m in DISTANCE_METRICS]
    feature_avg = normalized[:, feat_cols].mean(axis=1) if feat_cols else np.zeros(len(models))
    distance_avg = normalized[:, dist_cols].mean(axis=1) if dist_cols else np.zeros(len(models))
    ranks = np.vstack([rankdata(raw[:, j], method="average") for j in range(raw.shape[1])]).T
    return ComparisonTable(
        models, metrics, raw, normalized, feature_avg, distance_avg, ranks.mean(axis=1)
    )
