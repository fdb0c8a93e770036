"""Multi-head self-attention with per-head projection weights.

Q/K/V weights are stored per head rather than as one fused matrix so that an
individual head's projections can be aliased into a second encoder. The
forward pass still runs fused: per-head weights are concatenated on the fly
(the concat records a split in the backward pass), so sharing costs nothing
at compute time.

Head dropping for regularization lives here too: only heads whose
projections are shared may drop, and every surviving head is rescaled by
h / (h - n_dropped) so the expected output magnitude is preserved.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from . import tensor as tc
from .tensor import ParameterStore, Tensor


class MultiHeadSelfAttention:
    """Self-attention block whose parameters live in a ParameterStore.

    Parameter names, with ``prefix`` like ``tvm.layer0.attn``:
      {prefix}.head{m}.Wq / .Wk / .Wv   [d_model, d_head]
      {prefix}.Wo                        [d_model, d_model]
    """

    def __init__(self, store: ParameterStore, prefix: str, d_model: int, n_heads: int,
                 rng: np.random.Generator, dtype=np.float32):
        if n_heads < 1:
            raise ConfigError(f"n_heads must be >= 1, got {n_heads}")
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.prefix = prefix
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.heads = []
        for m in range(n_heads):
            head = {}
            for w in ("Wq", "Wk", "Wv"):
                head[w] = store.register(
                    f"{prefix}.head{m}.{w}",
                    Tensor(tc.xavier_uniform(rng, d_model, self.d_head, dtype)),
                )
            self.heads.append(head)
        self.Wo = store.register(f"{prefix}.Wo", Tensor(tc.xavier_uniform(rng, d_model, d_model, dtype)))

    def share_heads_from(self, store: ParameterStore, other: "MultiHeadSelfAttention",
                         n_shared: int, layer: int) -> None:
        """Point this block's first ``n_shared`` heads at another block's storage.

        Only Q/K/V projections are tied; the output projection stays private.
        """
        if not (0 <= n_shared <= min(self.n_heads, other.n_heads)):
            raise ConfigError(
                f"cannot share {n_shared} heads between blocks with {other.n_heads} and {self.n_heads} heads"
            )
        if self.d_head != other.d_head or self.d_model != other.d_model:
            raise ConfigError("head sharing requires matching d_model and d_head")
        for m in range(n_shared):
            for w in ("Wq", "Wk", "Wv"):
                handle = f"shared.layer{layer}.head{m}.{w}"
                store.rebind(f"{self.prefix}.head{m}.{w}", other.heads[m][w], handle)
                self.heads[m][w] = store[f"{self.prefix}.head{m}.{w}"]

    def _project(self, x: Tensor, which: str) -> Tensor:
        cat = tc.concat([h[which].tensor for h in self.heads], axis=1)
        p = tc.matmul(x, cat)
        b, length = x.shape[0], x.shape[1]
        return tc.swap_axes(tc.reshape(p, (b, length, self.n_heads, self.d_head)), 1, 2)

    def forward(self, x: Tensor, allow: np.ndarray | None = None,
                head_factors: np.ndarray | None = None) -> Tensor:
        """Attend over ``x`` of shape [B, L, d_model].

        ``allow`` is an optional [B, L] boolean key mask (False = never attend
        to that position). ``head_factors`` is an optional [n_heads] vector of
        per-head output multipliers used for head dropping.
        """
        if x.data.ndim != 3 or x.shape[-1] != self.d_model:
            raise ShapeError(f"attention input must be [B, L, {self.d_model}], got {x.shape}")
        q = self._project(x, "Wq")
        k = self._project(x, "Wk")
        v = self._project(x, "Wv")
        if allow is not None and allow.shape != x.shape[:2]:
            raise ShapeError(f"attention mask shape {allow.shape} does not match input {x.shape[:2]}")
        att = tc.attention_weights(q, k, 1.0 / np.sqrt(self.d_head),
                                   None if allow is None else allow[:, None, None, :])
        mixed = tc.matmul(att, v)
        if head_factors is not None:
            if head_factors.shape != (self.n_heads,):
                raise ShapeError(f"head_factors must have shape ({self.n_heads},), got {head_factors.shape}")
            mixed = tc.mul_const(mixed, head_factors.reshape(1, self.n_heads, 1, 1))
        b, length = x.shape[0], x.shape[1]
        merged = tc.reshape(tc.swap_axes(mixed, 1, 2), (b, length, self.d_model))
        return tc.matmul(merged, self.Wo.tensor)


def drophead_factors(n_heads: int, n_shared: int, rate: float,
                     rng: np.random.Generator) -> np.ndarray | None:
    """Draw per-head output multipliers for one training step.

    Each of the first ``n_shared`` heads drops independently with ``rate``;
    survivors (shared and private alike) are rescaled by h / (h - n_dropped).
    A draw that would silence every head is rejected and redrawn, which can
    only happen when all heads are shared.
    """
    if rate < 0 or rate >= 1:
        raise ConfigError(f"drop rate must be in [0, 1), got {rate}")
    if rate == 0 or n_shared == 0:
        return None
    if n_shared > n_heads:
        raise ConfigError(f"n_shared={n_shared} exceeds n_heads={n_heads}")
    while True:
        drops = rng.random(n_shared) < rate
        n_drop = int(drops.sum())
        if n_drop < n_heads:
            break
    factors = np.full(n_heads, n_heads / (n_heads - n_drop))
    factors[:n_shared][drops] = 0.0
    return factors
