"""The three competing serializations of an object sequence.

Key-centric: one token stream per key, tracking that key's value across all
steps ([CLS] key [VAL_SEP] v_1 [VAL_SEP] v_2 ...). Flattened: every pair of
every step in one stream with step/pair boundary markers. Record-centric:
per-step lists of pair token lists, for aggregation into one vector per step.

All three fill a key that is absent at a step with the [NONE] token, so each
view mentions the full key universe at every step and the value-token
multiset is identical across views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, KeyLookupError
from .objects import ObjectSequence
from .vocab import CLS, KV_SEP, NONE, T_SEP, VAL_SEP, tokenize


@dataclass
class ValueSequenceView:
    """One key's token stream; value_mask flags maskable (value-slot) positions."""

    key: str
    tokens: list[str]
    value_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class FlattenedView:
    tokens: list[str]
    n_steps: int
    steps_kept: int

    @property
    def fraction_kept(self) -> float:
        return self.steps_kept / self.n_steps if self.n_steps else 1.0

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class RecordView:
    """steps[t][j] is the token list of the j-th pair of step t."""

    keys: list[str]
    steps: list[list[list[str]]]

    def __len__(self) -> int:
        return len(self.steps)


def value_tokens(obj_pairs: dict[str, str], key: str) -> list[str]:
    """Word tokens of one value, or the [NONE] fill when the key is absent."""
    if key not in obj_pairs:
        return [NONE]
    return tokenize(obj_pairs[key]) or [NONE]


def build_value_sequence(seq: ObjectSequence, key: str) -> ValueSequenceView:
    universe = seq.key_universe()
    if key not in universe:
        raise KeyLookupError(f"key {key!r} not in this sequence's key universe {universe}")
    tokens = [CLS] + tokenize(key)
    mask = [False] * len(tokens)
    for obj in seq.objects:
        tokens.append(VAL_SEP)
        mask.append(False)
        vt = value_tokens(obj.pairs, key)
        tokens.extend(vt)
        mask.extend([True] * len(vt))
    return ValueSequenceView(key=key, tokens=tokens, value_mask=np.array(mask, dtype=bool))


def _step_block(obj_pairs: dict[str, str], universe: list[str]) -> list[str]:
    block = [T_SEP]
    for k in universe:
        block.extend(tokenize(k))
        block.append(KV_SEP)
        block.extend(value_tokens(obj_pairs, k))
    return block


def build_flattened_view(seq: ObjectSequence, max_tokens: int) -> FlattenedView:
    """Single-stream serialization, truncated by dropping oldest whole steps."""
    if max_tokens < 16:
        raise ConfigError(f"max_tokens must be >= 16, got {max_tokens}")
    universe = seq.key_universe()
    blocks = [_step_block(obj.pairs, universe) for obj in seq.objects]
    budget = max_tokens - 1
    kept: list[list[str]] = []
    used = 0
    for block in reversed(blocks):
        if used + len(block) > budget:
            break
        kept.append(block)
        used += len(block)
    kept.reverse()
    tokens = [CLS]
    for block in kept:
        tokens.extend(block)
    return FlattenedView(tokens=tokens, n_steps=len(blocks), steps_kept=len(kept))


def build_record_view(seq: ObjectSequence) -> RecordView:
    universe = seq.key_universe()
    steps = []
    for obj in seq.objects:
        pairs = []
        for k in universe:
            pairs.append(tokenize(k) + [KV_SEP] + value_tokens(obj.pairs, k))
        steps.append(pairs)
    return RecordView(keys=universe, steps=steps)


# ---------------------------------------------------------------------------
# token-budget accounting

VIEWS = ("flattened", "key-centric", "record-centric")


def _flattened_length(seq: ObjectSequence) -> int:
    universe = seq.key_universe()
    total = 1
    for obj in seq.objects:
        total += 1
        for k in universe:
            total += len(tokenize(k)) + 1 + len(value_tokens(obj.pairs, k))
    return total


def _key_centric_max_length(seq: ObjectSequence) -> int:
    n = len(seq.objects)
    best = 0
    for k in seq.key_universe():
        length = 1 + len(tokenize(k)) + n
        for obj in seq.objects:
            length += len(value_tokens(obj.pairs, k))
        best = max(best, length)
    return best


def count_value_words(seq: ObjectSequence) -> int:
    """Word tokens contributed by present values ([NONE] fills excluded)."""
    total = 0
    for obj in seq.objects:
        for v in obj.pairs.values():
            total += len(tokenize(v))
    return total


def view_lengths(sequences: list[ObjectSequence], view: str) -> np.ndarray:
    """Position cost per sequence under one view: what the corresponding
    encoder would consume. Total tokens (flattened), the longest per-key
    stream (key-centric), or the step count (record-centric)."""
    if view not in VIEWS:
        raise ConfigError(f"unknown view {view!r}, choose from {list(VIEWS)}")
    if view == "flattened":
        counts = [_flattened_length(s) for s in sequences]
    elif view == "key-centric":
        counts = [_key_centric_max_length(s) for s in sequences]
    else:
        counts = [len(s.objects) for s in sequences]
    return np.array(counts, dtype=np.int64)


def budget_report(sequences: list[ObjectSequence], view: str, cap: int | None = None) -> dict:
    """Corpus quantiles of the per-sequence position costs for one view."""
    arr = view_lengths(sequences, view)
    report = {
        "view": view,
        "sequences": len(sequences),
        "median": float(np.median(arr)) if len(arr) else 0.0,
        "p95": float(np.percentile(arr, 95)) if len(arr) else 0.0,
        "max": int(arr.max()) if len(arr) else 0,
        "total_tokens": int(arr.sum()),
        "value_words": int(sum(count_value_words(s) for s in sequences)),
        "cap": cap,
        "over_cap_fraction": float((arr > cap).mean()) if (cap is not None and len(arr)) else 0.0,
    }
    return report
