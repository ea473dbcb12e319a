"""Greedy longest-match tokenizer over the prompt grammar.

The vocabulary covers the fixed template words, the bracketed control
strings (kept as ordinary text, single tokens), digits, and lowercase
letters for condition labels. Numbers are tokenized digit by digit so a
model pretrained on random values generalizes to any value distribution.
"""

from __future__ import annotations

import re

PAD = "<pad>"
EOS = "<eos>"
UNK = "<unk>"

_LITERALS = [
    "Condition:",
    "Input:",
    "Target:",
    "value_",
    "[blank]",
    "[sep]",
    "[answer]",
    "data",
    "is",
    "NaN",
    ", ",
    " ",
    ",",
    ".",
    "-",
    "_",
] + [str(d) for d in range(10)] + [chr(c) for c in range(ord("a"), ord("z") + 1)]


class PromptTokenizer:
    def __init__(self):
        self.tokens = [PAD, EOS, UNK] + _LITERALS
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.token_to_id[PAD]
        self.eos_id = self.token_to_id[EOS]
        self.unk_id = self.token_to_id[UNK]
        # longest match first so "value_" beats "v", "[sep]" beats "["
        pattern = "|".join(
            re.escape(t) for t in sorted(_LITERALS, key=len, reverse=True)
        )
        self._rx = re.compile(pattern)

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def encode(self, text: str, add_eos: bool = False) -> list[int]:
        ids = []
        pos = 0
        while pos < len(text):
            m = self._rx.match(text, pos)
            if m:
                ids.append(self.token_to_id[m.group(0)])
                pos = m.end()
            else:
                ids.append(self.unk_id)
                pos += 1
        if add_eos:
            ids.append(self.eos_id)
        return ids

    def decode(self, ids) -> str:
        parts = []
        for i in ids:
            i = int(i)
            if i in (self.pad_id, self.eos_id):
                continue
            parts.append("" if i == self.unk_id else self.tokens[i])
        return "".join(parts)
