"""HTTP service: fine-tune a causal LM on a prompt corpus, then sample
completions.

Wire protocol:
  GET  /v1/health                      -> {"status": "ok"}
  POST /v1/finetune {prompts, hyperparams} -> {"model_id": ...}
  POST /v1/generate {model_id, prompts, temperature, max_new_tokens, seed?}
                                       -> {"completions": [...]}
Errors return {"error": message} with 400 (bad corpus/hyperparams),
404 (unknown model), 422 (invalid sampling params), 500 (training failure).
"""

from __future__ import annotations

import copy
import logging
import os
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .model import load_base, cache_dir
from .registry import ModelRegistry, UnknownModel
from .training import InvalidParams, TrainingParams, fine_tune, sample

log = logging.getLogger("llm_service")

MAX_NEW_TOKENS_CAP = 512


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


class Service:
    """Owns the base model, the registry, and the concurrency discipline:
    one training job at a time, generation bounded by a semaphore."""

    def __init__(self, device: str | None = None, registry_root: Path | None = None):
        self.device = device or os.environ.get("DEVICE", "cpu")
        self.registry = ModelRegistry(registry_root or cache_dir() / "registry")
        self._train_lock = threading.Lock()
        self._gen_sem = threading.BoundedSemaphore(
            int(os.environ.get("MAX_CONCURRENT_GEN", "4"))
        )
        self._base = None
        self._tokenizer = None
        self._base_lock = threading.Lock()
        self._model_cache: dict[str, object] = {}
        self._cache_lock = threading.Lock()

    def base(self):
        with self._base_lock:
            if self._base is None:
                self._base, self._tokenizer = load_base(self.device)
            return self._base, self._tokenizer

    def finetune(self, prompts: list[str], params: TrainingParams, seed: int) -> dict:
        base, tok = self.base()
        with self._train_lock:  # FIFO via lock fairness; one job at a time
            model = copy.deepcopy(base)
            report = fine_tune(model, tok, prompts, params, self.device, seed=seed)
            model_id = self.registry.register(
                {k: v.cpu() for k, v in model.state_dict().items()}, report
            )
            with self._cache_lock:
                self._model_cache[model_id] = model
        out = self.registry.report(model_id)
        out["model_id"] = model_id
        return out

    def _model_for(self, model_id: str):
        with self._cache_lock:
            if model_id in self._model_cache:
                return self._model_cache[model_id]
        state = self.registry.load_state(model_id)  # raises UnknownModel
        base, _ = self.base()
        model = copy.deepcopy(base)
        model.load_state_dict(state)
        model.to(self.device)
        model.eval()
        with self._cache_lock:
            self._model_cache[model_id] = model
        return model

    def generate(self, model_id: str, prompts: list[str], temperature: float,
                 max_new_tokens: int, seed: int | None) -> list[str]:
        model = self._model_for(model_id)
        _, tok = self.base()
        with self._gen_sem:
            return sample(model, tok, prompts, temperature, max_new_tokens,
                          self.device, seed=seed)


def create_app(service: Service | None = None) -> FastAPI:
    app = FastAPI(title="llm-service")
    svc = service or Service()
    app.state.service = svc

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/finetune")
    async def finetune(request: Request):
        body = await request.json()
        prompts = body.get("prompts")
        if not isinstance(prompts, list) or not prompts:
            return _error(400, "prompts must be a non-empty list")
        if not all(isinstance(p, str) and p.strip() for p in prompts):
            return _error(400, "prompts must be non-empty strings")
        try:
            params = TrainingParams(**body.get("hyperparams", {}))
        except InvalidParams as exc:
            return _error(400, str(exc))
        except TypeError as exc:
            return _error(400, f"bad hyperparams: {exc}")
        seed = body.get("seed", 0)
        try:
            report = svc.finetune(prompts, params, int(seed))
        except Exception as exc:  # training failure
            log.exception("finetune failed")
            return _error(500, f"training failed: {exc}")
        return report

    @app.post("/v1/generate")
    async def generate(request: Request):
        body = await request.json()
        model_id = body.get("model_id")
        prompts = body.get("prompts")
        if not isinstance(model_id, str):
            return _error(422, "model_id must be a string")
        if not isinstance(prompts, list) or not prompts:
            return _error(422, "prompts must be a non-empty list")
        temperature = body.get("temperature", 1.0)
        if not isinstance(temperature, (int, float)) or temperature <= 0:
            return _error(422, "temperature must be positive")
        max_new_tokens = body.get("max_new_tokens", 64)
        if not isinstance(max_new_tokens, int) or max_new_tokens < 1:
            return _error(422, "max_new_tokens must be a positive integer")
        max_new_tokens = min(max_new_tokens, MAX_NEW_TOKENS_CAP)
        seed = body.get("seed")
        if seed is not None and not isinstance(seed, int):
            return _error(422, "seed must be an integer")
        try:
            completions = svc.generate(
                model_id, [str(p) for p in prompts], float(temperature),
                max_new_tokens, seed,
            )
        except UnknownModel:
            return _error(404, f"unknown model_id {model_id!r}")
        return {"completions": completions}

    @app.get("/v1/models/{model_id}")
    def model_report(model_id: str):
        try:
            return svc.registry.report(model_id)
        except UnknownModel:
            return _error(404, f"unknown model_id {model_id!r}")

    return app


def main():
    import uvicorn

    logging.basicConfig(level=logging.INFO)
    port = int(os.environ.get("PORT", "8000"))
    uvicorn.run(create_app(), host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()
