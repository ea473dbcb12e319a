"""Generation backends: fine-tune on a prompt corpus, then sample completions.

Two implementations share the contract: a self-contained Gaussian-copula
reference backend (no LLM required) and an HTTP client for the remote
fine-tune/generate service.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, asdict

import numpy as np
from scipy.stats import norm, rankdata

from .core import DataError
from .textcodec import PromptTemplate, parse_generation


class BackendError(RuntimeError):
    """Backend failure; ``retryable`` and ``attempts`` carry retry metadata."""

    def __init__(self, message: str, retryable: bool = False, attempts: int = 1):
        super().__init__(message)
        self.retryable = retryable
        self.attempts = attempts


@dataclass(frozen=True)
class TrainingParams:
    learning_rate: float = 8e-5
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 5
    val_fraction: float = 0.2
    eval_every: int = 5

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if min(self.batch_size, self.max_epochs, self.patience, self.eval_every) < 1:
            raise DataError("training parameters must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise DataError("val_fraction must be in (0, 1)")


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    batch_size: int = 16
    max_new_tokens: int | None = None   # default 16*K, resolved by the backend
    seed: int | None = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise DataError("temperature must be positive")
        if self.batch_size < 1:
            raise DataError("batch size must be >= 1")


@dataclass
class FaultModes:
    """Deterministic corruption of reference-backend output, for exercising
    the filter paths in tests."""

    missing_rate: float = 0.0
    duplicate_rate: float = 0.0
    outlier_rate: float = 0.0
    collapse_norms: bool = False


_BLANK_RE = re.compile(r"\[blank\]")


class GaussianCopulaModel:
    """Empirical marginals + Gaussian copula over normal scores."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] < 5:
            raise DataError("need at least 5 rows to fit the copula")
        self.n, self.k = values.shape
        self.marginals = np.sort(values, axis=0)
        self.constant = self.marginals[0] == self.marginals[-1]
        live = ~self.constant
        if live.any():
            u = rankdata(values[:, live], axis=0) / (self.n + 1)
            z = norm.ppf(u)
            corr = np.corrcoef(z, rowvar=False)
            corr = np.atleast_2d(corr)
            try:
                np.linalg.cholesky(corr)
            except np.linalg.LinAlgError:
                corr = corr + 1e-6 * np.eye(corr.shape[0])
            self.chol = np.linalg.cholesky(corr)
        else:
            self.chol = np.zeros((0, 0))
        self.live = live

    def sample(self, n: int, temperature: float, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((n, self.k))
        out[:, self.constant] = self.marginals[0, self.constant]
        n_live = int(self.live.sum())
        if n_live:
            eps = rng.standard_normal((n, n_live))
            z = np.sqrt(temperature) * eps @ self.chol.T
            u = norm.cdf(z)
            # Inverse empirical CDF: samples are always training values,
            # so generated marginals cannot extrapolate.
            idx = np.clip((u * self.n).astype(int), 0, self.n - 1)
            live_cols = np.flatnonzero(self.live)
            for j, col in enumerate(live_cols):
                out[:, col] = self.marginals[idx[:, j], col]
        return out

    def to_dict(self) -> dict:
        return {
            "marginals": self.marginals.tolist(),
            "constant": self.constant.tolist(),
            "chol": self.chol.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianCopulaModel":
        obj = cls.__new__(cls)
        obj.marginals = np.asarray(doc["marginals"], dtype=np.float64)
        obj.n, obj.k = obj.marginals.shape
        obj.constant = np.asarray(doc["constant"], dtype=bool)
        obj.live = ~obj.constant
        obj.chol = np.asarray(doc["chol"], dtype=np.float64)
        return obj


def reference_fit(values: np.ndarray) -> GaussianCopulaModel:
    return GaussianCopulaModel(values)


def _perm_from_prompt(prompt: str, k: int) -> tuple[int, ...]:
    parsed = parse_generation(prompt + " ", k)
    if parsed.permutation is None:
        raise DataError("prompt does not contain a full feature permutation")
    return parsed.permutation


class ReferenceBackend:
    """Statistical stand-in for the LLM: parses the fine-tune corpus back
    into an embedding table and fits a Gaussian copula over it."""

    kind = "reference"

    def __init__(self, template: PromptTemplate | None = None,
                 faults: FaultModes | None = None,
                 channel_spans: list[tuple[str, int, int]] | None = None):
        self.template = template or PromptTemplate()
        self.faults = faults or FaultModes()
        self.channel_spans = channel_spans
        self.model: GaussianCopulaModel | None = None
        self.k: int | None = None

    @property
    def fitted(self) -> bool:
        return self.model is not None

    def fine_tune(self, prompts: list[str], params: TrainingParams | None = None) -> None:
        if not prompts:
            raise DataError("empty prompt corpus")
        k = len(_BLANK_RE.findall(prompts[0]))
        if k < 1:
            raise DataError("prompts carry no feature slots")
        rows = []
        for p in prompts:
            parsed = parse_generation(p, k, self.template)
            if parsed.is_complete:
                rows.append(parsed.values)
        if len(rows) < 5:
            raise DataError("too few parseable prompts to fit the reference model")
        self.model = reference_fit(np.asarray(rows))
        self.k = k

    def _apply_faults(self, rows: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Returns (rows, missing_mask)."""
        g, k = rows.shape
        missing = np.zeros((g, k), dtype=bool)
        f = self.faults
        if f.duplicate_rate > 0 and g > 1:
            dup = rng.random(g) < f.duplicate_rate
            dup[0] = False
            for i in np.flatnonzero(dup):
                rows[i] = rows[rng.integers(0, i)]
        if f.outlier_rate > 0:
            out = rng.random(g) < f.outlier_rate
            rows[out] *= 50.0
        if f.missing_rate > 0:
            miss = rng.random(g) < f.missing_rate
            for i in np.flatnonzero(miss):
                missing[i, rng.integers(0, k)] = True
        if f.collapse_norms:
            spans = self.channel_spans or [("all", 0, k)]
            for _, start, kc in spans:
                block = rows[:, start : start + kc]
                nrm = np.linalg.norm(block, axis=1)
                nrm = np.maximum(nrm, 1e-12)
                rows[:, start : start + kc] = block / nrm[:, None]
        return rows, missing

    def generate(self, prompts: list[str], params: SamplingParams | None = None) -> list[str]:
        if not self.fitted:
            raise BackendError("backend not fitted")
        params = params or SamplingParams()
        rng = np.random.default_rng(params.seed)
        rows = self.model.sample(len(prompts), params.temperature, rng)
        rows, missing = self._apply_faults(rows, rng)
        completions = []
        for i, prompt in enumerate(prompts):
            perm = _perm_from_prompt(prompt, self.k)
            parts = []
            for j in perm:
                tok = "NaN" if missing[i, j - 1] else self.template.format_value(rows[i, j - 1])
                parts.append(f"{tok} {self.template.answer}")
            completions.append(f"{prompt} {' '.join(parts)}")
        return completions


class RemoteBackend:
    """Client for the HTTP fine-tune/generate service."""

    kind = "remote"

    def __init__(self, base_url: str, timeout: float = 600.0, retries: int = 3,
                 session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.session = session or requests.Session()
        self.model_id: str | None = None

    @property
    def fitted(self) -> bool:
        return self.model_id is not None

    def _post(self, path: str, body: dict) -> dict:
        import requests

        last = None
        for attempt in range(1, self.retries + 1):
            try:
                resp = self.session.post(
                    f"{self.base_url}{path}", json=body, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last = exc
                time.sleep(min(2 ** (attempt - 1), 8) * 0.1)
                continue
            if resp.status_code >= 400:
                try:
                    detail = resp.json().get("error", resp.text)
                except ValueError:
                    detail = resp.text
                raise BackendError(
                    f"{path} failed with {resp.status_code}: {detail}",
                    retryable=resp.status_code >= 500,
                    attempts=attempt,
                )
            try:
                return resp.json()
            except ValueError:
                raise BackendError(f"malformed reply from {path}", attempts=attempt)
        raise BackendError(
            f"{path} unreachable after {self.retries} attempts: {last}",
            retryable=True,
            attempts=self.retries,
        )

    def health(self) -> bool:
        try:
            return self._post is not None and self.session.get(
                f"{self.base_url}/v1/health", timeout=10
            ).status_code == 200
        except Exception:
            return False

    def fine_tune(self, prompts: list[str], params: TrainingParams | None = None) -> None:
        if not prompts:
            raise DataError("empty prompt corpus")
        params = params or TrainingParams()
        body = {"prompts": list(prompts), "hyperparams": asdict(params)}
        reply = self._post("/v1/finetune", body)
        if "model_id" not in reply:
            raise BackendError("finetune reply missing model_id")
        self.model_id = reply["model_id"]

    def generate(self, prompts: list[str], params: SamplingParams | None = None) -> list[str]:
        if not self.fitted:
            raise BackendError("backend not fitted")
        params = params or SamplingParams()
        k = len(_BLANK_RE.findall(prompts[0])) if prompts else 1
        body = {
            "model_id": self.model_id,
            "prompts": list(prompts),
            "temperature": params.temperature,
            "max_new_tokens": params.max_new_tokens or 16 * max(k, 1),
        }
        if params.seed is not None:
            body["seed"] = int(params.seed)
        reply = self._post("/v1/generate", body)
        comps = reply.get("completions")
        if not isinstance(comps, list) or len(comps) != len(prompts):
            raise BackendError("malformed generate reply")
        return [str(c) for c in comps]


def fine_tune(backend, prompts: list[str], params: TrainingParams | None = None):
    """Functional facade over the backend contract."""
    backend.fine_tune(prompts, params)
    return backend


def generate(backend, prompts: list[str], params: SamplingParams | None = None) -> list[str]:
    return backend.generate(prompts, params)
