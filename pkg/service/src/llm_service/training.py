"""Per-request fine-tuning with validation-based early stopping, and
temperature-controlled sampling."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch

from .model import _batchify, lm_loss


class InvalidParams(ValueError):
    pass


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
            raise InvalidParams("learning_rate must be positive")
        for name in ("batch_size", "max_epochs", "patience", "eval_every"):
            if getattr(self, name) < 1:
                raise InvalidParams(f"{name} must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidParams("val_fraction must be in (0, 1)")


@dataclass
class TrainingReport:
    epochs_run: int = 0
    steps_run: int = 0
    evaluations: int = 0
    best_val_loss: float = float("inf")
    final_val_loss: float = float("inf")
    early_stopped: bool = False
    val_history: list = field(default_factory=list)


def _val_loss(model, batches) -> float:
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for ids, mask in batches:
            total += float(lm_loss(model, ids, mask)) * ids.shape[0]
            n += ids.shape[0]
    model.train()
    return total / n


def fine_tune(model, tokenizer, prompts: list[str], params: TrainingParams,
              device: str, seed: int = 0) -> TrainingReport:
    """Train in place; on return the model holds the best-validation weights."""
    gen = torch.Generator().manual_seed(seed)
    seqs = [tokenizer.encode(p, add_eos=True) for p in prompts]
    order = torch.randperm(len(seqs), generator=gen).tolist()
    n_val = max(1, int(round(params.val_fraction * len(seqs))))
    if n_val >= len(seqs):
        n_val = len(seqs) - 1
    val_seqs = [seqs[i] for i in order[:n_val]]
    train_seqs = [seqs[i] for i in order[n_val:]]
    val_batches = [
        _batchify(val_seqs[i : i + params.batch_size], tokenizer.pad_id, device)
        for i in range(0, len(val_seqs), params.batch_size)
    ]
    opt = torch.optim.AdamW(model.parameters(), lr=params.learning_rate)
    report = TrainingReport()
    best_state = copy.deepcopy(model.state_dict())
    bad_evals = 0
    model.train()
    done = False
    for epoch in range(1, params.max_epochs + 1):
        report.epochs_run = epoch
        perm = torch.randperm(len(train_seqs), generator=gen).tolist()
        for i in range(0, len(train_seqs), params.batch_size):
            batch = [train_seqs[j] for j in perm[i : i + params.batch_size]]
            ids, mask = _batchify(batch, tokenizer.pad_id, device)
            loss = lm_loss(model, ids, mask)
            opt.zero_grad()
            loss.backward()
            opt.step()
            report.steps_run += 1
            if report.steps_run % params.eval_every == 0:
                vl = _val_loss(model, val_batches)
                report.evaluations += 1
                report.val_history.append(vl)
                if vl < report.best_val_loss:
                    report.best_val_loss = vl
                    best_state = copy.deepcopy(model.state_dict())
                    bad_evals = 0
                else:
                    bad_evals += 1
                    if bad_evals >= params.patience:
                        report.early_stopped = True
                        done = True
                        break
        if done:
            break
    if report.evaluations == 0:
        vl = _val_loss(model, val_batches)
        report.evaluations = 1
        report.val_history.append(vl)
        report.best_val_loss = vl
        best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    report.final_val_loss = report.best_val_loss
    return report


@torch.no_grad()
def sample(model, tokenizer, prompts: list[str], temperature: float,
           max_new_tokens: int, device: str, seed: int | None = None) -> list[str]:
    """Left-padded batched multinomial sampling; returns prompt + completion."""
    gen = None
    if seed is not None:
        gen = torch.Generator(device=device).manual_seed(int(seed))
    enc = [tokenizer.encode(p) for p in prompts]
    width = max(len(e) for e in enc)
    n = len(enc)
    ids = torch.full((n, width), tokenizer.pad_id, dtype=torch.long)
    mask = torch.zeros((n, width), dtype=torch.long)
    for i, e in enumerate(enc):
        ids[i, width - len(e):] = torch.tensor(e, dtype=torch.long)
        mask[i, width - len(e):] = 1
    ids, mask = ids.to(device), mask.to(device)
    finished = torch.zeros(n, dtype=torch.bool, device=device)
    model.eval()
    for _ in range(max_new_tokens):
        position_ids = (mask.cumsum(dim=1) - 1).clamp(min=0)
        logits = model(input_ids=ids, attention_mask=mask,
                       position_ids=position_ids).logits[:, -1, :]
        probs = torch.softmax(logits / temperature, dim=-1)
        nxt = torch.multinomial(probs, 1, generator=gen).squeeze(1)
        nxt = torch.where(finished, torch.full_like(nxt, tokenizer.pad_id), nxt)
        finished |= nxt == tokenizer.eos_id
        ids = torch.cat([ids, nxt[:, None]], dim=1)
        mask = torch.cat([mask, (~finished | (nxt != tokenizer.pad_id)).long()[:, None]], dim=1)
        if bool(finished.all()):
            break
    return [tokenizer.decode(row.tolist()) for row in ids]
