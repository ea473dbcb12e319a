"""Fill-In-The-Middle serialization of embedding rows and completion parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .core import DataError


@dataclass(frozen=True)
class PromptTemplate:
    precision: int = 4
    condition: str | None = None
    blank: str = "[blank]"
    sep: str = "[sep]"
    answer: str = "[answer]"

    def __post_init__(self):
        if self.precision < 1:
            raise DataError("precision must be >= 1")
        tokens = (self.blank, self.sep, self.answer)
        if any(not t for t in tokens) or len(set(tokens)) != 3:
            raise DataError("special tokens must be non-empty and distinct")

    def format_value(self, v: float) -> str:
        return f"{v:.{self.precision}f}"


@dataclass(frozen=True)
class ParsedRow:
    """K parsed values (NaN marks a missing/unparseable slot)."""

    values: np.ndarray
    source_text: str
    permutation: tuple[int, ...] | None = None

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def is_complete(self) -> bool:
        return not bool(np.any(self.missing_mask))


def sample_permutation(k: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform random permutation of the 1-based feature ids 1..k."""
    if k < 1:
        raise DataError("k must be >= 1")
    return tuple(int(j) + 1 for j in rng.permutation(k))


def _input_section(perm, template: PromptTemplate) -> str:
    slots = ", ".join(f"value_{j} is {template.blank}" for j in perm)
    prefix = ""
    if template.condition is not None:
        prefix = f"Condition: data is {template.condition} {template.sep} "
    return f"{prefix}Input: {slots} {template.sep} Target:"


def encode_finetune(row, perm, template: PromptTemplate | None = None) -> str:
    """One fine-tune prompt: blanked inputs in permutation order followed by
    the answer-delimited values in the same order."""
    template = template or PromptTemplate()
    row = np.asarray(row, dtype=np.float64)
    if len(perm) != row.size or sorted(perm) != list(range(1, row.size + 1)):
        raise DataError("perm must be a permutation of 1..K")
    if not np.all(np.isfinite(row)):
        raise DataError("row values must be finite")
    answers = " ".join(
        f"{template.format_value(row[j - 1])} {template.answer}" for j in perm
    )
    return f"{_input_section(perm, template)} {answers}"


def make_inference_prompt(k: int, perm, template: PromptTemplate | None = None) -> str:
    """Same Input section as the fine-tune format, cut after 'Target:'."""
    template = template or PromptTemplate()
    if len(perm) != k or sorted(perm) != list(range(1, k + 1)):
        raise DataError("perm must be a permutation of 1..K")
    return _input_section(perm, template)


_FEATURE_RE = re.compile(r"value_(\d+)\s+is")
_TARGET_RE = re.compile(r"Target:")


def parse_generation(text: str, k: int, template: PromptTemplate | None = None) -> ParsedRow:
    """Recover a numeric row from backend output.

    The permutation is read from the Input section's feature ids (robust to
    truncated completions); a bare completion falls back to canonical order.
    Missing values, unparseable chunks, and unknown feature ids stay NaN.
    """
    template = template or PromptTemplate()
    m = _TARGET_RE.search(text)
    if m:
        prefix, completion = text[: m.start()], text[m.end():]
    else:
        prefix, completion = "", text
    ids = [int(g) for g in _FEATURE_RE.findall(prefix)]
    if len(ids) == len(set(ids)) and sorted(ids) == list(range(1, k + 1)):
        perm: tuple[int, ...] | None = tuple(ids)
    else:
        perm = None
    order = perm if perm is not None else tuple(range(1, k + 1))
    values = np.full(k, np.nan)
    chunks = completion.split(template.answer)
    # A well-formed completion ends with the answer token, so the final
    # chunk is trailing junk; never treat it as a value.
    for slot, chunk in enumerate(chunks[:-1][:k]):
        token = chunk.strip()
        try:
            values[order[slot] - 1] = float(token)
        except ValueError:
            pass
    return ParsedRow(values, text, perm)
