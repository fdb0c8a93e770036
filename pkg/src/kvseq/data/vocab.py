"""Word-level vocabulary with a fixed reserved-id block.

Ids 0-6 are the structural tokens, id 7 is the unknown fallback, and real
tokens follow ordered by (frequency desc, token asc) so rebuilding on the
same corpus always yields the same mapping. The tokenizer lowercases and
splits words from punctuation, which also guarantees raw text can never
produce a reserved bracket token.
"""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable

import numpy as np

from ..errors import ConfigError

PAD, CLS, VAL_SEP, MASK, NONE, T_SEP, KV_SEP = (
    "[PAD]", "[CLS]", "[VAL_SEP]", "[MASK]", "[NONE]", "[T_SEP]", "[KV_SEP]")
RESERVED_TOKENS = [PAD, CLS, VAL_SEP, MASK, NONE, T_SEP, KV_SEP]
UNK_TOKEN = "[UNK]"

PAD_ID, CLS_ID, VAL_SEP_ID, MASK_ID, NONE_ID, T_SEP_ID, KV_SEP_ID = range(7)
UNK_ID = 7

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation tokens. '[CLS]' in raw text becomes [ cls ]."""
    return _WORD_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, token_to_id: dict[str, int], min_freq: int):
        self.token_to_id = token_to_id
        self.id_to_token = {i: t for t, i in token_to_id.items()}
        self.min_freq = min_freq

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def __len__(self) -> int:
        return len(self.token_to_id)

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 1) -> "Vocabulary":
        """Count word tokens over raw texts and assign ids deterministically."""
        if min_freq < 1:
            raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(tokenize(text))
        if not counts:
            raise ConfigError("cannot build a vocabulary from an empty corpus")
        token_to_id = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        token_to_id[UNK_TOKEN] = UNK_ID
        kept = sorted((t for t, c in counts.items() if c >= min_freq),
                      key=lambda t: (-counts[t], t))
        for t in kept:
            token_to_id[t] = len(token_to_id)
        return cls(token_to_id, min_freq)

    @classmethod
    def from_token_lists(cls, token_lists: Iterable[list[str]], min_freq: int = 1) -> "Vocabulary":
        """Build from pre-tokenized word lists (reserved tokens are skipped)."""
        if min_freq < 1:
            raise ConfigError(f"min_freq must be >= 1, got {min_freq}")
        counts: Counter[str] = Counter()
        reserved = set(RESERVED_TOKENS) | {UNK_TOKEN}
        for toks in token_lists:
            counts.update(t for t in toks if t not in reserved)
        if not counts:
            raise ConfigError("cannot build a vocabulary from an empty corpus")
        token_to_id = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        token_to_id[UNK_TOKEN] = UNK_ID
        for t in sorted(counts, key=lambda t: (-counts[t], t)):
            token_to_id[t] = len(token_to_id)
        return cls(token_to_id, min_freq)

    def encode(self, tokens: list[str]) -> np.ndarray:
        unk = UNK_ID
        return np.array([self.token_to_id.get(t, unk) for t in tokens], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.id_to_token.get(int(i), UNK_TOKEN) for i in np.asarray(ids).reshape(-1)]

    def to_dict(self) -> dict:
        return {"min_freq": self.min_freq, "tokens": self.token_to_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        tok = {str(t): int(i) for t, i in d["tokens"].items()}
        for i, t in enumerate(RESERVED_TOKENS):
            if tok.get(t) != i:
                raise ConfigError(f"vocabulary file corrupted: {t} must map to id {i}")
        if tok.get(UNK_TOKEN) != UNK_ID:
            raise ConfigError(f"vocabulary file corrupted: {UNK_TOKEN} must map to id {UNK_ID}")
        return cls(tok, int(d["min_freq"]))


def vocab_from_sequences(sequences, min_freq: int = 1) -> Vocabulary:
    """Convenience builder scanning every key name and value text."""
    def texts():
        for seq in sequences:
            for obj in seq.objects:
                for k, v in obj.pairs.items():
                    yield k
                    yield v
    return Vocabulary.build(texts(), min_freq=min_freq)
