"""In-process model registry: model_id -> checkpoint path + training report."""

from __future__ import annotations

import dataclasses
import json
import threading
import uuid
from pathlib import Path

import torch

from .training import TrainingReport


class UnknownModel(KeyError):
    pass


class ModelRegistry:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}

    def register(self, state_dict, report: TrainingReport) -> str:
        model_id = f"m-{uuid.uuid4().hex[:12]}"
        path = self.root / f"{model_id}.pt"
        torch.save(state_dict, path)
        doc = dataclasses.asdict(report)
        with open(self.root / f"{model_id}.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
        with self._lock:
            self._entries[model_id] = {"path": path, "report": doc}
        return model_id

    def report(self, model_id: str) -> dict:
        with self._lock:
            if model_id not in self._entries:
                raise UnknownModel(model_id)
            return dict(self._entries[model_id]["report"])

    def load_state(self, model_id: str):
        with self._lock:
            if model_id not in self._entries:
                raise UnknownModel(model_id)
            path = self._entries[model_id]["path"]
        return torch.load(path, map_location="cpu")

    def ids(self) -> list[str]:
        with self._lock:
            return list(self._entries)
