"""Flattened and record-centric baseline classifiers.

The flattened model runs a standard encoder over the single interleaved
token stream and reads the class off position 0. The record models first
collapse each step's key/value pairs into one vector (by sum, by fixed
concatenation and projection, or by one self-attention pass and a mean),
add step positions, and encode the per-step vectors.
"""

from __future__ import annotations

import re

import numpy as np

from . import tensor as tc
from .attention import MultiHeadSelfAttention
from .checkpoint import load_checkpoint, save_checkpoint
from .data.encoding import FlattenedData, RecordData
from .data.vocab import PAD_ID
from .encoder import ModelConfig, TransformerEncoder, TvmKaModel
from .errors import ConfigError, LengthError, NumericError, ShapeError
from .metrics import MetricsReport, evaluate
from .tensor import (
    Adam, Parameter, ParameterStore, Tape, Tensor, backward, cross_entropy, no_grad, record,
)

MODEL_KINDS = ("tvm_ka", "flattened", "record_sum", "record_concat", "record_selfattn")
RECORD_AGGREGATORS = ("sum", "concat", "selfattn")

_NAME_RE = re.compile(r"^(tvm|ka|flat|record)(\.[A-Za-z0-9_]+)+$")


def audit_parameter_names(store: ParameterStore) -> list[str]:
    """Check every registered name against the component.section.role pattern
    and return the sorted names. Any stray name is a config error: checkpoint
    compatibility and the phase-isolation checks both key off these names."""
    names = sorted(p.name for p in store.parameters())
    bad = [n for n in names if not _NAME_RE.match(n)]
    if bad:
        raise ConfigError(f"parameter names outside the naming scheme: {bad}")
    if len(names) != len(set(names)):
        raise ConfigError("duplicate parameter names")
    return names


def _mean_pool(x: Tensor, weights: np.ndarray) -> Tensor:
    """Weighted pool over the middle axis: [G, P, d] with [G, 1, P] weights."""
    return tc.matmul(Tensor(weights, requires_grad=False), x)


class FlattenedClassifier:
    """Single encoder over the flattened view, classifying at position 0."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.dtype = tc.DTYPES[config.dtype]
        self.store = ParameterStore()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x666C61]))
        self.encoder = TransformerEncoder(
            self.store, "flat", d_model=config.d_model, n_heads=config.n_heads,
            n_layers=config.n_layers, d_ff=config.d_ff, rng=rng, dtype=self.dtype,
            vocab_size=config.vocab_size, max_positions=config.max_positions,
            with_positions=True)
        self.cls_W = self.store.register(
            "flat.classifier.W",
            Tensor(tc.xavier_uniform(rng, config.d_model, config.n_classes, self.dtype)))
        self.cls_b = self.store.register(
            "flat.classifier.b", Tensor(np.zeros(config.n_classes, dtype=self.dtype)))

    def forward(self, ids: np.ndarray, allow: np.ndarray | None = None) -> Tensor:
        if allow is None:
            allow = np.asarray(ids) != PAD_ID
        hidden = self.encoder.encode_ids(ids, allow=allow)
        pooled = tc.select_time(hidden, 0)
        return tc.add(tc.matmul(pooled, self.cls_W.tensor), self.cls_b.tensor)

    def parameters(self) -> list[Parameter]:
        return self.store.parameters()


class RecordClassifier:
    """Step-level encoder over per-step pair aggregates.

    ``aggregator`` picks how a step's K pair vectors become one vector:
    'sum' (order-free), 'concat' (fixed key order, concat then project), or
    'selfattn' (one attention pass over the pairs, then their mean).
    """

    def __init__(self, config: ModelConfig, aggregator: str, seed: int = 0,
                 n_keys: int | None = None):
        config.validate()
        if aggregator not in RECORD_AGGREGATORS:
            raise ConfigError(f"aggregator {aggregator!r} not one of {RECORD_AGGREGATORS}")
        if aggregator == "concat":
            if n_keys is None or n_keys < 1:
                raise ConfigError("concat aggregation needs the fixed key count n_keys")
        self.config = config
        self.aggregator = aggregator
        self.n_keys = n_keys
        self.dtype = tc.DTYPES[config.dtype]
        self.store = ParameterStore()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x726563]))
        d = config.d_model
        self.token_emb = self.store.register(
            "record.embed.token",
            Tensor((rng.standard_normal((config.vocab_size, d)) * 0.02).astype(self.dtype)))
        self.pos_emb = self.store.register(
            "record.embed.position",
            Tensor((rng.standard_normal((config.max_positions, d)) * 0.02).astype(self.dtype)))
        self.cls_vec = self.store.register(
            "record.cls", Tensor((rng.standard_normal((1, d)) * 0.02).astype(self.dtype)))
        if aggregator == "concat":
            self.agg_W = self.store.register(
                "record.agg.W", Tensor(tc.xavier_uniform(rng, n_keys * d, d, self.dtype)))
            self.agg_b = self.store.register(
                "record.agg.b", Tensor(np.zeros(d, dtype=self.dtype)))
        elif aggregator == "selfattn":
            self.pair_attn = MultiHeadSelfAttention(
                self.store, "record.pair_attn", d, config.n_heads, rng, self.dtype)
        self.encoder = TransformerEncoder(
            self.store, "record.inter", d_model=d, n_heads=config.n_heads,
            n_layers=config.n_layers, d_ff=config.d_ff, rng=rng, dtype=self.dtype,
            with_positions=False)
        self.cls_W = self.store.register(
            "record.classifier.W", Tensor(tc.xavier_uniform(rng, d, config.n_classes, self.dtype)))
        self.cls_b = self.store.register(
            "record.classifier.b", Tensor(np.zeros(config.n_classes, dtype=self.dtype)))

    def pair_embed(self, pair_ids: np.ndarray, pair_counts: np.ndarray) -> Tensor:
        """Mean of the token embeddings of each pair: [B, T, K, P] -> [B, T, K, d]."""
        b, t, k, p = pair_ids.shape
        emb = tc.embedding_lookup(self.token_emb.tensor, pair_ids)
        emb = tc.reshape(emb, (b * t * k, p, self.config.d_model))
        w = ((pair_ids != PAD_ID) / pair_counts[..., None]).astype(self.dtype)
        pooled = _mean_pool(emb, w.reshape(b * t * k, 1, p))
        return tc.reshape(pooled, (b, t, k, self.config.d_model))

    def aggregate_record(self, pair_vecs: Tensor) -> Tensor:
        """Collapse [B, T, K, d] pair vectors to [B, T, d] step vectors."""
        b, t, k, d = pair_vecs.shape
        if self.aggregator == "sum":
            flat = tc.reshape(pair_vecs, (b * t, k, d))
            ones = np.ones((b * t, 1, k), dtype=self.dtype)
            return tc.reshape(tc.matmul(Tensor(ones), flat), (b, t, d))
        if self.aggregator == "concat":
            if k != self.n_keys:
                raise ShapeError(f"record has {k} pairs per step, projection expects {self.n_keys}")
            flat = tc.reshape(pair_vecs, (b, t, k * d))
            return tc.add(tc.matmul(flat, self.agg_W.tensor), self.agg_b.tensor)
        flat = tc.reshape(pair_vecs, (b * t, k, d))
        mixed = self.pair_attn.forward(flat)
        mean = np.full((b * t, 1, k), 1.0 / k, dtype=self.dtype)
        return tc.reshape(tc.matmul(Tensor(mean), mixed), (b, t, d))

    def forward(self, pair_ids: np.ndarray, pair_counts: np.ndarray,
                step_mask: np.ndarray) -> Tensor:
        b, t = step_mask.shape
        if t + 1 > self.config.max_positions:
            raise LengthError(t + 1, self.config.max_positions)
        steps = self.aggregate_record(self.pair_embed(pair_ids, pair_counts))
        head = tc.embedding_lookup(self.cls_vec.tensor, np.zeros((b, 1), dtype=np.int64))
        x = tc.concat([head, steps], axis=1)
        pos = tc.embedding_lookup(self.pos_emb.tensor, np.arange(t + 1))
        x = tc.add(x, pos)
        allow = np.concatenate([np.ones((b, 1), dtype=bool), step_mask], axis=1)
        hidden = self.encoder.encode_vectors(x, allow=allow)
        pooled = tc.select_time(hidden, 0)
        return tc.add(tc.matmul(pooled, self.cls_W.tensor), self.cls_b.tensor)

    def parameters(self) -> list[Parameter]:
        return self.store.parameters()


# ---------------------------------------------------------------------------
# shared training/eval loops


def _train_loop(forward_loss, n: int, steps: int,
                rng: np.random.Generator, batch_size: int) -> list[float]:
    if steps < 0:
        raise ConfigError(f"negative step count {steps}")
    losses = []
    for i in range(steps):
        pick = rng.integers(0, n, size=batch_size)
        try:
            loss = forward_loss(pick)
        except NumericError as e:
            raise NumericError(f"training failed at step {i}: {e}") from e
        if not np.isfinite(loss):
            raise NumericError(f"loss became non-finite at step {i}")
        losses.append(loss)
    return losses


def train_flattened(model: FlattenedClassifier, data: FlattenedData, steps: int,
                    optimizer: Adam, rng: np.random.Generator,
                    batch_size: int = 16) -> list[float]:
    if data.labels is None:
        raise ConfigError("training needs labeled sequences")

    def step(pick):
        model.store.zero_grad()
        with record(Tape()):
            loss = cross_entropy(model.forward(data.ids[pick]), data.labels[pick])
            backward(loss)
        optimizer.step()
        return float(loss.data)

    return _train_loop(step, data.ids.shape[0], steps, rng, batch_size)


def train_record(model: RecordClassifier, data: RecordData, steps: int,
                 optimizer: Adam, rng: np.random.Generator,
                 batch_size: int = 16) -> list[float]:
    if data.labels is None:
        raise ConfigError("training needs labeled sequences")

    def step(pick):
        model.store.zero_grad()
        with record(Tape()):
            logits = model.forward(data.pair_ids[pick], data.pair_counts[pick],
                                   data.step_mask[pick])
            loss = cross_entropy(logits, data.labels[pick])
            backward(loss)
        optimizer.step()
        return float(loss.data)

    return _train_loop(step, data.pair_ids.shape[0], steps, rng, batch_size)


def predict_flattened(model: FlattenedClassifier, data: FlattenedData,
                      batch_size: int = 64) -> np.ndarray:
    n = data.ids.shape[0]
    scores = np.empty((n, model.config.n_classes), dtype=np.float64)
    with no_grad():
        for lo in range(0, n, batch_size):
            scores[lo: lo + batch_size] = model.forward(data.ids[lo: lo + batch_size]).data
    return scores


def predict_record(model: RecordClassifier, data: RecordData,
                   batch_size: int = 64) -> np.ndarray:
    n = data.pair_ids.shape[0]
    scores = np.empty((n, model.config.n_classes), dtype=np.float64)
    with no_grad():
        for lo in range(0, n, batch_size):
            sl = slice(lo, lo + batch_size)
            scores[sl] = model.forward(data.pair_ids[sl], data.pair_counts[sl],
                                       data.step_mask[sl]).data
    return scores


def evaluate_flattened(model: FlattenedClassifier, data: FlattenedData,
                       k: int | None = None,
                       positive_class: int | None = None) -> MetricsReport:
    if data.labels is None:
        raise ConfigError("evaluation needs labeled sequences")
    scores = predict_flattened(model, data)
    return evaluate(scores, data.labels, k=k, positive_class=positive_class,
                    lengths=data.n_steps)


def evaluate_record(model: RecordClassifier, data: RecordData,
                    k: int | None = None,
                    positive_class: int | None = None) -> MetricsReport:
    if data.labels is None:
        raise ConfigError("evaluation needs labeled sequences")
    scores = predict_record(model, data)
    return evaluate(scores, data.labels, k=k, positive_class=positive_class,
                    lengths=data.n_steps)


# ---------------------------------------------------------------------------
# construction and persistence across all model kinds


def build_baseline(kind: str, config: ModelConfig, seed: int = 0,
                   n_keys: int | None = None):
    if kind == "tvm_ka":
        return TvmKaModel(config, seed=seed)
    if kind == "flattened":
        return FlattenedClassifier(config, seed=seed)
    if kind.startswith("record_"):
        aggregator = kind.removeprefix("record_")
        return RecordClassifier(config, aggregator, seed=seed, n_keys=n_keys)
    raise ConfigError(f"model kind {kind!r} not one of {MODEL_KINDS}")


def save_model(path: str, model) -> None:
    meta = {"model": model.config.to_dict()}
    if isinstance(model, TvmKaModel):
        meta["kind"] = "tvm_ka"
    elif isinstance(model, FlattenedClassifier):
        meta["kind"] = "flattened"
    elif isinstance(model, RecordClassifier):
        meta["kind"] = f"record_{model.aggregator}"
        meta["n_keys"] = model.n_keys
    else:
        raise ConfigError(f"cannot save a {type(model).__name__}")
    save_checkpoint(path, model.store, meta)


def load_any_model(path: str):
    store, meta = load_checkpoint(path)
    if not isinstance(meta, dict) or "kind" not in meta or "model" not in meta:
        raise ConfigError(f"{path}: checkpoint lacks the model kind and config")
    config = ModelConfig.from_dict(meta["model"])
    model = build_baseline(meta["kind"], config, seed=0, n_keys=meta.get("n_keys"))
    for p in model.store.parameters():
        if p.name not in store:
            raise ConfigError(f"{path}: checkpoint is missing parameter {p.name}")
        saved = store[p.name].tensor.data
        if saved.shape != p.tensor.data.shape:
            raise ShapeError(f"{p.name}: checkpoint shape {saved.shape} "
                             f"!= model shape {p.tensor.data.shape}")
        p.tensor.data[...] = saved
    return model
