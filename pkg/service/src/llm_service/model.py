"""Base language model loading.

Tries the checkpoint named by MODEL_NAME first. When that is unavailable
(offline environments), falls back to a miniature GPT-2-class model
pretrained in-process on randomly generated prompts in the service's own
grammar and cached on disk, so the cost is paid once per machine.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
import torch
from transformers import GPT2Config, GPT2LMHeadModel

from .tokenizer import PromptTokenizer

log = logging.getLogger("llm_service")

_CONDITIONS = ["temp", "hum", "load", "flow", "price", "wind"]

PRETRAIN_STEPS = int(os.environ.get("PRETRAIN_STEPS", "3500"))
PRETRAIN_BATCH = 16
PRETRAIN_LR = 3e-4
PRETRAIN_SEED = 0


def cache_dir() -> Path:
    root = os.environ.get("LLM_SERVICE_CACHE",
                          os.path.join(os.path.expanduser("~"), ".cache", "llm-service"))
    p = Path(root)
    p.mkdir(parents=True, exist_ok=True)
    return p


def random_prompt(rng: np.random.Generator) -> str:
    """A prompt in the service grammar with random shape and values."""
    k = int(rng.integers(1, 6))
    perm = rng.permutation(k) + 1
    values = np.round(rng.normal(0.0, rng.uniform(0.3, 3.0), size=k), 4)
    prefix = ""
    if rng.random() < 0.5:
        prefix = f"Condition: data is {_CONDITIONS[rng.integers(len(_CONDITIONS))]} [sep] "
    slots = ", ".join(f"value_{j} is [blank]" for j in perm)
    answers = " ".join(f"{values[j - 1]:.4f} [answer]" for j in perm)
    return f"{prefix}Input: {slots} [sep] Target: {answers}"


def miniature_config(vocab_size: int) -> GPT2Config:
    return GPT2Config(
        vocab_size=vocab_size,
        n_positions=384,
        n_embd=96,
        n_layer=2,
        n_head=4,
        bos_token_id=1,
        eos_token_id=1,
        pad_token_id=0,
    )


def _batchify(seqs: list[list[int]], pad_id: int, device) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(seqs), width), dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        mask[i, : len(s)] = 1
    return ids.to(device), mask.to(device)


def lm_loss(model, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    labels = ids.masked_fill(mask == 0, -100)
    return model(input_ids=ids, attention_mask=mask, labels=labels).loss


def pretrain_miniature(device: str, steps: int = PRETRAIN_STEPS) -> tuple[GPT2LMHeadModel, PromptTokenizer]:
    tok = PromptTokenizer()
    model = GPT2LMHeadModel(miniature_config(tok.vocab_size)).to(device)
    rng = np.random.default_rng(PRETRAIN_SEED)
    torch.manual_seed(PRETRAIN_SEED)
    opt = torch.optim.AdamW(model.parameters(), lr=PRETRAIN_LR)
    model.train()
    for step in range(1, steps + 1):
        seqs = [tok.encode(random_prompt(rng), add_eos=True) for _ in range(PRETRAIN_BATCH)]
        ids, mask = _batchify(seqs, tok.pad_id, device)
        loss = lm_loss(model, ids, mask)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0 or step == 1:
            log.info("pretrain step %d loss %.4f", step, float(loss.detach()))
    model.eval()
    return model, tok


def load_base(device: str) -> tuple[torch.nn.Module, object]:
    """(model, tokenizer). The tokenizer exposes encode/decode/pad_id/eos_id."""
    name = os.environ.get("MODEL_NAME", "gpt2")
    try:
        from transformers import AutoModelForCausalLM, AutoTokenizer

        hf_tok = AutoTokenizer.from_pretrained(name)
        model = AutoModelForCausalLM.from_pretrained(name).to(device)
        model.eval()
        log.info("loaded base model %r", name)
        return model, _HFTokenizerAdapter(hf_tok)
    except Exception as exc:
        log.warning("base model %r unavailable (%s); using cached miniature", name, exc)
    cache = cache_dir() / "miniature.pt"
    tok = PromptTokenizer()
    if cache.exists():
        model = GPT2LMHeadModel(miniature_config(tok.vocab_size))
        model.load_state_dict(torch.load(cache, map_location="cpu"))
        model = model.to(device)
        model.eval()
        return model, tok
    model, tok = pretrain_miniature(device)
    torch.save(model.state_dict(), cache)
    return model, tok


class _HFTokenizerAdapter:
    """Minimal facade so HF tokenizers match PromptTokenizer's surface."""

    def __init__(self, hf_tok):
        self._tok = hf_tok
        if hf_tok.pad_token_id is None:
            hf_tok.pad_token = hf_tok.eos_token
        self.pad_id = hf_tok.pad_token_id
        self.eos_id = hf_tok.eos_token_id

    def encode(self, text: str, add_eos: bool = False) -> list[int]:
        ids = self._tok.encode(text)
        if add_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids) -> str:
        ids = [int(i) for i in ids if int(i) not in (self.pad_id, self.eos_id)]
        return self._tok.decode(ids)
