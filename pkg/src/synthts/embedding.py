"""Per-channel basis decompositions (functional PCA / FastICA), coefficient
tables, and reconstruction.

The discrete L2 inner product is the plain sum over timesteps (unit spacing).
Windows are centered by the channel mean curve before decomposition; the mean
is re-added on reconstruction.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .core import DataError, InstanceSet

FPC = "fpc"
FICA = "fica"


@dataclass(frozen=True)
class ChannelBasis:
    name: str
    k: int
    mean_curve: np.ndarray          # (L,)
    basis: np.ndarray               # (k, L), rows are basis functions
    eigenvalues: np.ndarray | None = None
    converged: bool = True
    n_iter: int = 0


@dataclass(frozen=True)
class BasisSystem:
    method: str
    channels: tuple[ChannelBasis, ...]

    @property
    def length(self) -> int:
        return self.channels[0].basis.shape[1]

    @property
    def total_components(self) -> int:
        return sum(ch.k for ch in self.channels)

    def channel_spans(self) -> list[tuple[str, int, int]]:
        """(name, start_col, k) per channel in table column order."""
        spans, start = [], 0
        for ch in self.channels:
            spans.append((ch.name, start, ch.k))
            start += ch.k
        return spans


@dataclass(frozen=True)
class EmbeddingTable:
    values: np.ndarray                       # (I, K)
    channel_spans: tuple[tuple[str, int, int], ...]
    row_ids: tuple[int, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise DataError("embedding values must be 2-D")
        if not np.all(np.isfinite(v)):
            raise DataError("embedding values must be finite")
        k_total = sum(k for _, _, k in self.channel_spans)
        if k_total != v.shape[1]:
            raise DataError("channel spans do not cover the table width")
        if not self.row_ids:
            object.__setattr__(self, "row_ids", tuple(range(v.shape[0])))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def channel_block(self, name_or_index) -> np.ndarray:
        spans = self.channel_spans
        if isinstance(name_or_index, int):
            name, start, k = spans[name_or_index]
        else:
            match = [s for s in spans if s[0] == name_or_index]
            if not match:
                raise KeyError(name_or_index)
            name, start, k = match[0]
        return self.values[:, start : start + k]


def _sign_normalize(basis: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude element is positive."""
    out = basis.copy()
    for row in out:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return out


def _check_k(x: InstanceSet, k: int):
    if x.n_instances < 2:
        raise DataError("need at least 2 instances to fit a basis")
    if not 1 <= k <= min(x.n_instances, x.length):
        raise DataError(f"k={k} out of range for I={x.n_instances}, L={x.length}")


def fit_fpc(x: InstanceSet, channel: int, k: int) -> ChannelBasis:
    """Top-k eigenvectors of the sample covariance of centered windows,
    ordered by descending eigenvalue."""
    _check_k(x, k)
    w = x.channel(channel)
    mean_curve = w.mean(axis=0)
    centered = w - mean_curve
    # SVD of the centered data matrix: right singular vectors are the
    # covariance eigenvectors, singular values squared the (unnormalized)
    # eigenvalues.
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    eig = s**2 / (x.n_instances - 1)
    if k <= len(eig) and np.any(eig[:k] <= 1e-12 * max(eig[0], 1.0)):
        warnings.warn("rank deficiency: trailing eigenvalues are ~0", stacklevel=2)
    basis = _sign_normalize(vt[:k])
    return ChannelBasis(x.channel_names[channel], k, mean_curve, basis, eig[:k])


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    s, u = np.linalg.eigh(w @ w.T)
    s = np.maximum(s, 1e-12)
    return (u / np.sqrt(s)) @ u.T @ w


def fit_fastica(
    x: InstanceSet,
    channel: int,
    k: int,
    max_iter: int = 500,
    tol: float = 1e-6,
    seed: int | np.random.Generator | None = 0,
) -> ChannelBasis:
    """Symmetric fixed-point FastICA (log-cosh contrast) on the transposed
    view (timesteps as samples), yielding k independent components of
    length L as basis rows."""
    _check_k(x, k)
    w = x.channel(channel)
    mean_curve = w.mean(axis=0)
    centered = w - mean_curve                       # (I, L)
    z = centered.T                                   # (L, I): L samples
    z = z - z.mean(axis=0)
    n_samples = z.shape[0]
    u, d, _ = np.linalg.svd(z, full_matrices=False)
    d = np.maximum(d, 1e-12)
    x1 = (u[:, :k] * np.sqrt(n_samples)).T           # (k, L) whitened signals
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    wmat = _sym_decorrelate(rng.standard_normal((k, k)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gwtx = np.tanh(wmat @ x1)
        g_wtx = (1.0 - gwtx**2).mean(axis=1)
        w_new = _sym_decorrelate(gwtx @ x1.T / n_samples - g_wtx[:, None] * wmat)
        lim = float(np.max(np.abs(np.abs(np.diag(w_new @ wmat.T)) - 1.0)))
        wmat = w_new
        if lim < tol:
            converged = True
            break
    sources = wmat @ x1                               # (k, L)
    norms = np.linalg.norm(sources, axis=1)
    norms = np.maximum(norms, 1e-12)
    basis = sources / norms[:, None]
    # Order by descending single-component variance retained.
    scores = np.array([np.sum((centered @ b) ** 2) for b in basis])
    order = np.argsort(-scores)
    basis = _sign_normalize(basis[order])
    return ChannelBasis(
        x.channel_names[channel], k, mean_curve, basis,
        eigenvalues=None, converged=converged, n_iter=it,
    )


def fit_basis(
    x: InstanceSet,
    method: str,
    k: int | list[int],
    max_iter: int = 500,
    tol: float = 1e-6,
    seed: int | None = 0,
) -> BasisSystem:
    """Fit one basis per channel; ``k`` may be shared or per-channel."""
    if method not in (FPC, FICA):
        raise DataError(f"unknown method {method!r}")
    ks = [k] * x.n_channels if isinstance(k, int) else list(k)
    if len(ks) != x.n_channels:
        raise DataError("per-channel k list length mismatch")
    chans = []
    for c, kc in enumerate(ks):
        if method == FPC:
            chans.append(fit_fpc(x, c, kc))
        else:
            chans.append(fit_fastica(x, c, kc, max_iter=max_iter, tol=tol, seed=seed))
    return BasisSystem(method, tuple(chans))


def embed(x: InstanceSet, basis: BasisSystem) -> EmbeddingTable:
    """Project centered windows onto the basis. FPC uses plain inner
    products; FastICA uses the least-squares projection since its rows are
    not orthogonal (makes reconstruct a true inverse on the fitted
    subspace)."""
    if basis.length != x.length:
        raise DataError("basis length does not match instance length")
    if len(basis.channels) != x.n_channels:
        raise DataError("basis channel count does not match instance set")
    blocks = []
    for c, ch in enumerate(basis.channels):
        centered = x.channel(c) - ch.mean_curve
        if basis.method == FPC:
            coeff = centered @ ch.basis.T
        else:
            coeff, *_ = np.linalg.lstsq(ch.basis.T, centered.T, rcond=None)
            coeff = coeff.T
        blocks.append(coeff)
    values = np.concatenate(blocks, axis=1)
    return EmbeddingTable(values, tuple(basis.channel_spans()))


def reconstruct(table: EmbeddingTable, basis: BasisSystem) -> InstanceSet:
    """mean_curve + sum_j coeff_j * basis_j per channel."""
    spans = basis.channel_spans()
    if list(table.channel_spans) != [tuple(s) for s in spans]:
        raise DataError("table spans do not match basis")
    chans = []
    for ch, (_, start, k) in zip(basis.channels, spans):
        coeff = table.values[:, start : start + k]
        chans.append(coeff @ ch.basis + ch.mean_curve)
    data = np.stack(chans, axis=1)
    names = tuple(ch.name for ch in basis.channels)
    return InstanceSet(data, names)


def variance_retained(x: InstanceSet, basis: BasisSystem) -> np.ndarray:
    """Per-channel reconstruction R^2 of the centered windows."""
    table = embed(x, basis)
    recon = reconstruct(table, basis)
    out = np.empty(x.n_channels)
    for c, ch in enumerate(basis.channels):
        centered = x.channel(c) - ch.mean_curve
        total = float(np.sum(centered**2))
        if total == 0.0:
            raise DataError(f"channel {ch.name} has zero total variance")
        resid = float(np.sum((x.channel(c) - recon.channel(c)) ** 2))
        out[c] = 1.0 - resid / total
    return out


def select_k(
    x: InstanceSet,
    method: str,
    target: float,
    k_max: int | None = None,
    seed: int | None = 0,
) -> list[int]:
    """Smallest per-channel k whose variance retained reaches ``target``,
    capped at ``k_max`` (warning when the target is unreachable)."""
    if not 0.0 < target <= 1.0:
        raise DataError("target must be in (0, 1]")
    cap = min(x.n_instances - 1, x.length)
    k_max = cap if k_max is None else min(k_max, cap)
    out = []
    for c in range(x.n_channels):
        single = InstanceSet(x.data[:, c : c + 1, :], (x.channel_names[c],))
        chosen = None
        for k in range(1, k_max + 1):
            bs = fit_basis(single, method, k, seed=seed)
            if variance_retained(single, bs)[0] >= target:
                chosen = k
                break
        if chosen is None:
            warnings.warn(
                f"target {target} unreachable at k_max={k_max} "
                f"for channel {x.channel_names[c]}",
                stacklevel=2,
            )
            chosen = k_max
        out.append(chosen)
    return out


def save_basis(basis: BasisSystem, path) -> None:
    doc = {
        "method": basis.method,
        "channels": [
            {
                "name": ch.name,
                "k": ch.k,
                "mean_curve": ch.mean_curve.tolist(),
                "basis": ch.basis.tolist(),
                "eigenvalues": None if ch.eigenvalues is None else ch.eigenvalues.tolist(),
            }
            for ch in basis.channels
        ],
        "diagnostics": [
            {"name": ch.name, "converged": ch.converged, "n_iter": ch.n_iter}
            for ch in basis.channels
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_basis(path) -> BasisSystem:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    diags = {d["name"]: d for d in doc.get("diagnostics", [])}
    chans = []
    for ch in doc["channels"]:
        d = diags.get(ch["name"], {})
        chans.append(
            ChannelBasis(
                ch["name"],
                ch["k"],
                np.asarray(ch["mean_curve"], dtype=np.float64),
                np.asarray(ch["basis"], dtype=np.float64),
                None if ch.get("eigenvalues") is None
                else np.asarray(ch["eigenvalues"], dtype=np.float64),
                d.get("converged", True),
                d.get("n_iter", 0),
            )
        )
    return BasisSystem(doc["method"], tuple(chans))


def save_table(table: EmbeddingTable, csv_path, spans_path) -> None:
    header = ",".join(f"value_{j + 1}" for j in range(table.width))
    np.savetxt(csv_path, table.values, delimiter=",", header=header,
               comments="", fmt="%.17g")
    with open(spans_path, "w", encoding="utf-8") as fh:
        json.dump(
            {"channel_spans": [list(s) for s in table.channel_spans],
             "row_ids": list(table.row_ids)},
            fh,
        )


def load_table(csv_path, spans_path) -> EmbeddingTable:
    values = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    with open(spans_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    spans = tuple(tuple(s) for s in meta["channel_spans"])
    return EmbeddingTable(values, spans, tuple(meta.get("row_ids", [])))
