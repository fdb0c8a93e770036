"""Turn object sequences into padded integer arrays for the models.

Three layouts, one per architecture family:

* key-centric: one row per (sequence, key) value sequence, keys in sorted
  order so a sequence's rows are contiguous and reproducible,
* flattened: one row per sequence over the single long token stream,
* record: one [step, key, token] block per sequence for the record models.

Padding uses id 0, which no real token maps to, so ``ids != 0`` doubles as
the attention mask everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .objects import ObjectSequence
from .views import build_flattened_view, build_record_view, build_value_sequence
from .vocab import PAD_ID, Vocabulary


@dataclass
class LabelMap:
    classes: list

    @classmethod
    def from_sequences(cls, seqs: list[ObjectSequence]) -> "LabelMap":
        labels = {s.label for s in seqs}
        if None in labels:
            raise ConfigError("cannot build a label map while some sequences are unlabeled")
        return cls(classes=sorted(labels, key=str))

    def __len__(self) -> int:
        return len(self.classes)

    def index(self, label) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise ConfigError(f"label {label!r} not in label map {self.classes}") from None

    def to_dict(self) -> dict:
        return {"classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelMap":
        return cls(classes=list(d["classes"]))


def _encode_labels(seqs, label_map: LabelMap | None) -> np.ndarray | None:
    if label_map is None:
        return None
    return np.array([label_map.index(s.label) for s in seqs], dtype=np.int64)


@dataclass
class KeyCentricData:
    """All value sequences of a corpus, padded to a common length.

    Rows for one sequence sit at ``item_start[i]:item_start[i + 1]`` in
    sorted-key order; ``item_seq`` maps each row back to its sequence.
    """

    ids: np.ndarray          # [n_items, L] int32, PAD_ID padded
    value_mask: np.ndarray   # [n_items, L] bool, True at maskable value positions
    item_seq: np.ndarray     # [n_items] int32
    item_start: np.ndarray   # [n_seqs + 1] int64 row ranges per sequence
    keys: list[list[str]]    # sorted key universe per sequence
    labels: np.ndarray | None
    seq_ids: list[str]
    n_steps: np.ndarray      # [n_seqs] int64, for length-slice metrics

    @property
    def n_items(self) -> int:
        return self.ids.shape[0]

    @property
    def n_seqs(self) -> int:
        return len(self.seq_ids)

    def attention_mask(self, rows: np.ndarray) -> np.ndarray:
        return self.ids[rows] != PAD_ID


def encode_key_centric(seqs: list[ObjectSequence], vocab: Vocabulary,
                       label_map: LabelMap | None = None) -> KeyCentricData:
    if not seqs:
        raise ConfigError("no sequences to encode")
    rows = []
    masks = []
    item_seq = []
    item_start = [0]
    keys_per_seq = []
    for si, seq in enumerate(seqs):
        keys = sorted(seq.key_universe())
        keys_per_seq.append(keys)
        for key in keys:
            vs = build_value_sequence(seq, key)
            rows.append(vocab.encode(vs.tokens))
            masks.append(vs.value_mask)
            item_seq.append(si)
        item_start.append(len(rows))
    max_len = max(r.shape[0] for r in rows)
    ids = np.full((len(rows), max_len), PAD_ID, dtype=np.int32)
    value_mask = np.zeros((len(rows), max_len), dtype=bool)
    for i, (r, m) in enumerate(zip(rows, masks)):
        ids[i, : r.shape[0]] = r
        value_mask[i, : m.shape[0]] = m
    return KeyCentricData(
        ids=ids,
        value_mask=value_mask,
        item_seq=np.array(item_seq, dtype=np.int32),
        item_start=np.array(item_start, dtype=np.int64),
        keys=keys_per_seq,
        labels=_encode_labels(seqs, label_map),
        seq_ids=[s.id for s in seqs],
        n_steps=np.array([len(s) for s in seqs], dtype=np.int64),
    )


@dataclass
class FlattenedData:
    ids: np.ndarray          # [n_seqs, L] int32
    lengths: np.ndarray      # [n_seqs] true token counts before padding
    labels: np.ndarray | None
    seq_ids: list[str]
    n_steps: np.ndarray
    fraction_kept: np.ndarray  # share of steps that survived truncation


def encode_flattened(seqs: list[ObjectSequence], vocab: Vocabulary, max_tokens: int,
                     label_map: LabelMap | None = None) -> FlattenedData:
    if not seqs:
        raise ConfigError("no sequences to encode")
    views = [build_flattened_view(s, max_tokens) for s in seqs]
    max_len = max(len(v.tokens) for v in views)
    ids = np.full((len(seqs), max_len), PAD_ID, dtype=np.int32)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for i, v in enumerate(views):
        enc = vocab.encode(v.tokens)
        ids[i, : enc.shape[0]] = enc
        lengths[i] = enc.shape[0]
    return FlattenedData(
        ids=ids,
        lengths=lengths,
        labels=_encode_labels(seqs, label_map),
        seq_ids=[s.id for s in seqs],
        n_steps=np.array([len(s) for s in seqs], dtype=np.int64),
        fraction_kept=np.array([v.fraction_kept for v in views], dtype=np.float64),
    )


@dataclass
class RecordData:
    """Per-step bags of key/value pair tokens for the record models.

    ``pair_ids[i, t, j]`` holds the tokens of pair j at step t of sequence i.
    Steps past a sequence's end are padding (``step_mask`` False); within a
    real step every key of the universe is present, absent ones as [NONE].
    """

    pair_ids: np.ndarray     # [n_seqs, T, K, P] int32
    pair_counts: np.ndarray  # [n_seqs, T, K] float64 token counts, min 1
    step_mask: np.ndarray    # [n_seqs, T] bool
    labels: np.ndarray | None
    seq_ids: list[str]
    n_steps: np.ndarray

    @property
    def n_keys(self) -> int:
        return self.pair_ids.shape[2]


def encode_record(seqs: list[ObjectSequence], vocab: Vocabulary,
                  label_map: LabelMap | None = None) -> RecordData:
    if not seqs:
        raise ConfigError("no sequences to encode")
    views = [build_record_view(s) for s in seqs]
    n_keys = {len(v.keys) for v in views}
    if len(n_keys) != 1:
        raise ConfigError(f"record encoding needs one shared key-universe size, got {sorted(n_keys)}")
    K = n_keys.pop()
    T = max(len(v.steps) for v in views)
    P = max(len(pair) for v in views for step in v.steps for pair in step)
    pair_ids = np.full((len(seqs), T, K, P), PAD_ID, dtype=np.int32)
    pair_counts = np.ones((len(seqs), T, K), dtype=np.float64)
    step_mask = np.zeros((len(seqs), T), dtype=bool)
    for i, v in enumerate(views):
        step_mask[i, : len(v.steps)] = True
        for t, step in enumerate(v.steps):
            for j, pair in enumerate(step):
                enc = vocab.encode(pair)
                pair_ids[i, t, j, : enc.shape[0]] = enc
                pair_counts[i, t, j] = enc.shape[0]
    return RecordData(
        pair_ids=pair_ids,
        pair_counts=pair_counts,
        step_mask=step_mask,
        labels=_encode_labels(seqs, label_map),
        seq_ids=[s.id for s in seqs],
        n_steps=np.array([len(s) for s in seqs], dtype=np.int64),
    )
