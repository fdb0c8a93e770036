"""Two coupled transformer encoders over key-centric inputs.

The temporal encoder (``tvm.*``) reads one key's value sequence as token ids
and produces a key representation: the hidden state at position 0, where the
sequence-start token sits. The aggregator (``ka.*``) reads a set of key
representations, with no positional embeddings, and pools them at a learned
aggregation token whose output feeds the classifier.

Coupling is storage-level: the first ``shared_heads`` attention heads of each
aggregator layer use the very same Q/K/V arrays as the temporal encoder's
matching layer. Output projections, feed-forwards and norms stay private.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as tc
from .attention import MultiHeadSelfAttention
from .errors import ConfigError, LengthError, ShapeError
from .tensor import DTYPES, ParameterStore, Tensor


@dataclass
class ModelConfig:
    """Hyperparameters embedded verbatim in every checkpoint."""

    vocab_size: int
    n_classes: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    max_positions: int = 512
    shared_heads: int = 2
    drophead_rate: float = 0.2
    dtype: str = "float32"

    def validate(self) -> None:
        problems = []
        if self.vocab_size < 8:
            problems.append(f"vocab_size={self.vocab_size} leaves no room past the reserved ids")
        if self.n_classes < 2:
            problems.append(f"n_classes={self.n_classes} (need at least 2)")
        if self.n_heads < 1:
            problems.append(f"n_heads={self.n_heads} (need at least 1)")
        elif self.d_model % self.n_heads != 0:
            problems.append(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not (0 <= self.shared_heads <= self.n_heads):
            problems.append(f"shared_heads={self.shared_heads} outside [0, {self.n_heads}]")
        if self.n_layers < 1:
            problems.append(f"n_layers={self.n_layers} (need at least 1)")
        if self.d_ff < 1:
            problems.append(f"d_ff={self.d_ff} (need at least 1)")
        if self.max_positions < 2:
            problems.append(f"max_positions={self.max_positions} (need at least 2)")
        if not (0 <= self.drophead_rate < 1):
            problems.append(f"drophead_rate={self.drophead_rate} outside [0, 1)")
        if self.dtype not in DTYPES:
            problems.append(f"dtype={self.dtype!r} (choose from {sorted(DTYPES)})")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


class FeedForward:
    def __init__(self, store: ParameterStore, prefix: str, d_model: int, d_ff: int,
                 rng: np.random.Generator, dtype):
        self.W1 = store.register(f"{prefix}.W1", Tensor(tc.xavier_uniform(rng, d_model, d_ff, dtype)))
        self.b1 = store.register(f"{prefix}.b1", Tensor(np.zeros(d_ff, dtype=dtype)))
        self.W2 = store.register(f"{prefix}.W2", Tensor(tc.xavier_uniform(rng, d_ff, d_model, dtype)))
        self.b2 = store.register(f"{prefix}.b2", Tensor(np.zeros(d_model, dtype=dtype)))

    def forward(self, x: Tensor) -> Tensor:
        h = tc.gelu(tc.add(tc.matmul(x, self.W1.tensor), self.b1.tensor))
        return tc.add(tc.matmul(h, self.W2.tensor), self.b2.tensor)


class LayerNormParams:
    def __init__(self, store: ParameterStore, prefix: str, d_model: int, dtype):
        self.gain = store.register(f"{prefix}.gain", Tensor(np.ones(d_model, dtype=dtype)))
        self.bias = store.register(f"{prefix}.bias", Tensor(np.zeros(d_model, dtype=dtype)))

    def forward(self, x: Tensor) -> Tensor:
        return tc.layer_norm(x, self.gain.tensor, self.bias.tensor)


class EncoderBlock:
    """Pre-norm block: x + Attn(LN1(x)), then x + FF(LN2(x))."""

    def __init__(self, store: ParameterStore, prefix: str, d_model: int, n_heads: int,
                 d_ff: int, rng: np.random.Generator, dtype):
        self.attn = MultiHeadSelfAttention(store, f"{prefix}.attn", d_model, n_heads, rng, dtype)
        self.ln1 = LayerNormParams(store, f"{prefix}.ln1", d_model, dtype)
        self.ln2 = LayerNormParams(store, f"{prefix}.ln2", d_model, dtype)
        self.ff = FeedForward(store, f"{prefix}.ff", d_model, d_ff, rng, dtype)

    def forward(self, x: Tensor, allow: np.ndarray | None,
                head_factors: np.ndarray | None) -> Tensor:
        x = tc.add(x, self.attn.forward(self.ln1.forward(x), allow, head_factors))
        return tc.add(x, self.ff.forward(self.ln2.forward(x)))


class TransformerEncoder:
    """Stack of pre-norm blocks with a final norm.

    With ``with_positions`` the encoder owns token and position embedding
    tables and consumes id matrices; without, it consumes ready-made vectors
    (the aggregator path, which must stay order-agnostic).
    """

    def __init__(self, store: ParameterStore, prefix: str, *, d_model: int, n_heads: int,
                 n_layers: int, d_ff: int, rng: np.random.Generator, dtype,
                 vocab_size: int | None = None, max_positions: int | None = None,
                 with_positions: bool = False):
        self.prefix = prefix
        self.d_model = d_model
        self.with_positions = with_positions
        self.max_positions = max_positions
        self.token_emb = None
        self.pos_emb = None
        if with_positions:
            if vocab_size is None or max_positions is None:
                raise ConfigError(f"{prefix}: embedding tables need vocab_size and max_positions")
            self.token_emb = store.register(
                f"{prefix}.embed.token",
                Tensor((rng.standard_normal((vocab_size, d_model)) * 0.02).astype(dtype)),
            )
            self.pos_emb = store.register(
                f"{prefix}.embed.position",
                Tensor((rng.standard_normal((max_positions, d_model)) * 0.02).astype(dtype)),
            )
        self.blocks = [
            EncoderBlock(store, f"{prefix}.layer{l}", d_model, n_heads, d_ff, rng, dtype)
            for l in range(n_layers)
        ]
        self.final_ln = LayerNormParams(store, f"{prefix}.final_ln", d_model, dtype)

    def _run_blocks(self, x: Tensor, allow: np.ndarray | None,
                    head_factors: list[np.ndarray | None] | None) -> Tensor:
        for l, block in enumerate(self.blocks):
            hf = head_factors[l] if head_factors is not None else None
            x = block.forward(x, allow, hf)
        return self.final_ln.forward(x)

    def encode_ids(self, ids: np.ndarray, allow: np.ndarray | None = None,
                   head_factors: list[np.ndarray | None] | None = None) -> Tensor:
        if self.token_emb is None:
            raise ConfigError(f"{self.prefix}: this encoder has no embedding tables")
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ShapeError(f"id batch must be 2-D, got shape {ids.shape}")
        length = ids.shape[1]
        if length > self.max_positions:
            raise LengthError(length, self.max_positions)
        x = tc.embedding_lookup(self.token_emb.tensor, ids)
        pos = tc.embedding_lookup(self.pos_emb.tensor, np.arange(length))
        x = tc.add(x, pos)
        return self._run_blocks(x, allow, head_factors)

    def encode_vectors(self, x: Tensor, allow: np.ndarray | None = None,
                       head_factors: list[np.ndarray | None] | None = None) -> Tensor:
        if x.data.ndim != 3 or x.shape[-1] != self.d_model:
            raise ShapeError(f"vector input must be [B, K, {self.d_model}], got {x.shape}")
        return self._run_blocks(x, allow, head_factors)


class TvmKaModel:
    """The paired encoders plus task heads, all in one ParameterStore."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.dtype = DTYPES[config.dtype]
        self.store = ParameterStore()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6D6F64]))
        self.tvm = TransformerEncoder(
            self.store, "tvm", d_model=config.d_model, n_heads=config.n_heads,
            n_layers=config.n_layers, d_ff=config.d_ff, rng=rng, dtype=self.dtype,
            vocab_size=config.vocab_size, max_positions=config.max_positions,
            with_positions=True,
        )
        self.mlm_bias = self.store.register(
            "tvm.mlm.bias", Tensor(np.zeros(config.vocab_size, dtype=self.dtype)))
        self.ka = TransformerEncoder(
            self.store, "ka", d_model=config.d_model, n_heads=config.n_heads,
            n_layers=config.n_layers, d_ff=config.d_ff, rng=rng, dtype=self.dtype,
            with_positions=False,
        )
        self.agg_token = self.store.register(
            "ka.agg_token", Tensor((rng.standard_normal((1, config.d_model)) * 0.02).astype(self.dtype)))
        self.cls_W = self.store.register(
            "ka.classifier.W", Tensor(tc.xavier_uniform(rng, config.d_model, config.n_classes, self.dtype)))
        self.cls_b = self.store.register(
            "ka.classifier.b", Tensor(np.zeros(config.n_classes, dtype=self.dtype)))
        for l, (ka_block, tvm_block) in enumerate(zip(self.ka.blocks, self.tvm.blocks)):
            ka_block.attn.share_heads_from(self.store, tvm_block.attn, config.shared_heads, l)

    # ---- temporal side -------------------------------------------------

    def tvm_encode(self, ids: np.ndarray, allow: np.ndarray | None = None,
                   head_factors: list[np.ndarray | None] | None = None) -> Tensor:
        return self.tvm.encode_ids(ids, allow, head_factors)

    def key_representations(self, hidden: Tensor) -> Tensor:
        """Pool each value sequence at position 0 (the sequence-start token)."""
        return tc.select_time(hidden, 0)

    def mlm_logits(self, hidden: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
        """Vocabulary logits at selected (row, col) positions of the hidden batch.

        The projection is tied to the token embedding table, plus a bias.
        """
        b, length, d = hidden.shape
        flat = tc.reshape(hidden, (b * length, d))
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        picked = tc.gather_rows(flat, rows * length + cols)
        return tc.add(tc.matmul(picked, tc.transpose_last(self.tvm.token_emb.tensor)),
                      self.mlm_bias.tensor)

    # ---- aggregation side ----------------------------------------------

    def ka_aggregate(self, key_reprs: Tensor, key_mask: np.ndarray | None = None,
                     head_factors: list[np.ndarray | None] | None = None) -> Tensor:
        """Pool a [B, K, d] set of key representations at the aggregation token."""
        b = key_reprs.shape[0]
        agg = tc.embedding_lookup(self.agg_token.tensor, np.zeros((b, 1), dtype=np.int64))
        x = tc.concat([agg, key_reprs], axis=1)
        allow = None
        if key_mask is not None:
            allow = np.concatenate([np.ones((b, 1), dtype=bool), np.asarray(key_mask, dtype=bool)], axis=1)
        hidden = self.ka.encode_vectors(x, allow, head_factors)
        return tc.select_time(hidden, 0)

    def classify(self, pooled: Tensor) -> Tensor:
        return tc.add(tc.matmul(pooled, self.cls_W.tensor), self.cls_b.tensor)

    # ---- parameter views -----------------------------------------------

    def tvm_parameters(self) -> list[tc.Parameter]:
        return [p for p in self.store.parameters() if p.name.startswith("tvm.")]

    def ka_parameters(self) -> list[tc.Parameter]:
        return [p for p in self.store.parameters() if p.name.startswith("ka.")]

    def shared_pairs(self) -> list[tuple[str, str]]:
        """(tvm name, ka name) for every tied projection."""
        pairs = []
        for l in range(self.config.n_layers):
            for m in range(self.config.shared_heads):
                for w in ("Wq", "Wk", "Wv"):
                    pairs.append((f"tvm.layer{l}.attn.head{m}.{w}",
                                  f"ka.layer{l}.attn.head{m}.{w}"))
        return pairs


def build_model(config: ModelConfig, seed: int = 0) -> TvmKaModel:
    return TvmKaModel(config, seed=seed)


def load_model(path) -> TvmKaModel:
    """Rebuild a model from a checkpoint, restoring weights and aliases."""
    from .checkpoint import load_checkpoint

    store, cfg_dict = load_checkpoint(path)
    model = TvmKaModel(ModelConfig.from_dict(cfg_dict), seed=0)
    for p in model.store.parameters():
        if p.name not in store:
            raise ConfigError(f"checkpoint is missing parameter {p.name!r}")
        src = store[p.name].tensor.data
        if src.shape != p.tensor.data.shape:
            raise ShapeError(f"checkpoint parameter {p.name!r} has shape {src.shape}, "
                             f"model expects {p.tensor.data.shape}")
        p.tensor.data[...] = src.astype(p.tensor.data.dtype, copy=False)
    return model
