"""Built-in oracle suite: fast self-checks of the invariants the whole
package leans on. Each check returns a machine-readable result so the
command-line front end can report and gate on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .data.encoding import encode_key_centric
from .data.objects import ObjectSequence, StructuredObject
from .data.synthetic import generate_needle_task
from .data.vocab import MASK_ID, vocab_from_sequences
from .encoder import ModelConfig, TvmKaModel
from .rng import phase_rng
from .training import InterleaveSchedule, mlm_mask


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _verify_model(dtype: str = "float64", seed: int = 12) -> TvmKaModel:
    cfg = ModelConfig(vocab_size=32, n_classes=3, d_model=16, n_heads=4, n_layers=2,
                      d_ff=32, max_positions=24, shared_heads=2, drophead_rate=0.0,
                      dtype=dtype)
    return TvmKaModel(cfg, seed=seed)


def _toy_batch():
    """One sequence with three keys over eight steps, key-centrically encoded."""
    rng = np.random.default_rng(3)
    words = [f"w{i}" for i in range(12)]
    steps = [StructuredObject({k: words[int(rng.integers(len(words)))]
                               for k in ("alpha", "beta", "gamma")})
             for _ in range(8)]
    seq = ObjectSequence(id="toy", objects=steps)
    vocab = vocab_from_sequences([seq])
    return encode_key_centric([seq], vocab)


def check_grad(tolerance: float = 1e-4) -> CheckResult:
    """Backward gradients against central differences through the whole
    stack: value encoder, key pooling, aggregation, classification."""
    model = _verify_model()
    data = _toy_batch()
    ids = data.ids
    allow = data.attention_mask(np.arange(data.n_items))
    targets = np.array([2])
    d = model.config.d_model

    def f():
        hidden = model.tvm_encode(ids, allow=allow)
        kr = model.key_representations(hidden)
        pooled = model.ka_aggregate(tc.reshape(kr, (1, data.n_items, d)))
        return tc.cross_entropy(model.classify(pooled), targets)

    worst = tc.grad_check(f, model.store.parameters(), h=1e-5,
                          max_coords_per_param=2, rng=np.random.default_rng(13))
    return CheckResult("grad_check", worst <= tolerance,
                       f"worst relative error {worst:.2e} (tolerance {tolerance:.0e})")


def check_alias(model: TvmKaModel | None = None) -> CheckResult:
    """Shared attention heads must be one storage under two names: identity,
    matching handles, and write-through visibility."""
    if model is None:
        model = _verify_model()
    pairs = model.shared_pairs()
    if not pairs:
        return CheckResult("alias", False, "model exposes no shared head pairs")
    for tvm_name, ka_name in pairs:
        a, b = model.store[tvm_name], model.store[ka_name]
        if a.tensor is not b.tensor:
            return CheckResult("alias", False,
                               f"{tvm_name} and {ka_name} hold separate storage")
        if a.shared_handle != b.shared_handle or a.shared_handle is None:
            return CheckResult("alias", False,
                               f"{tvm_name} and {ka_name} disagree on the shared handle")
        original = a.tensor.data[0, 0]
        a.tensor.data[0, 0] = original + 1.0
        visible = b.tensor.data[0, 0] == original + 1.0
        a.tensor.data[0, 0] = original
        if not visible:
            return CheckResult("alias", False,
                               f"write through {tvm_name} not visible via {ka_name}")
    return CheckResult("alias", True, f"{len(pairs)} shared weight pairs verified")


def check_permutation(tolerance: float = 1e-9) -> CheckResult:
    """Aggregation over key representations must not depend on key order."""
    model = _verify_model()
    rng = np.random.default_rng(5)
    kr = rng.normal(size=(2, 5, model.config.d_model))
    perm = rng.permutation(5)
    while (perm == np.arange(5)).all():
        perm = rng.permutation(5)
    with tc.no_grad():
        base = model.classify(model.ka_aggregate(tc.Tensor(kr))).data
        swapped = model.classify(model.ka_aggregate(tc.Tensor(kr[:, perm]))).data
    worst = float(np.abs(base - swapped).max())
    return CheckResult("permutation", worst <= tolerance,
                       f"max logit shift under key permutation {worst:.2e}")


def check_masking(rate: float = 0.15, slack: float = 0.015) -> CheckResult:
    """Mask selection statistics over a large corpus: fraction near the rate,
    value positions only, at least one mask per row."""
    seqs = generate_needle_task(K=8, N=64, n_samples=8, seed=0)
    vocab = vocab_from_sequences(seqs)
    data = encode_key_centric(seqs, vocab)
    batch = mlm_mask(data.ids, data.value_mask, rate=rate, rng=phase_rng(0, "verify.mask"))
    masked = batch.input_ids == MASK_ID
    fraction = masked.sum() / data.value_mask.sum()
    problems = []
    if abs(fraction - rate) > slack:
        problems.append(f"fraction {fraction:.4f} outside {rate} +/- {slack}")
    if (masked & ~data.value_mask).any():
        problems.append("a structural token was masked")
    if (masked.sum(axis=1) == 0).any():
        problems.append("a row received no mask")
    if problems:
        return CheckResult("masking", False, "; ".join(problems))
    return CheckResult("masking", True,
                       f"masked {fraction:.4f} of {int(data.value_mask.sum())} value tokens")


def check_schedule() -> CheckResult:
    """The default schedule must hold the 2:1 step ratio and the canonical
    phase order: pretrain, then value/build/aggregate per round."""
    s = InterleaveSchedule()
    if s.tvm_steps_per_round != 2 * s.ka_steps_per_round:
        return CheckResult("schedule", False,
                           f"default ratio {s.tvm_steps_per_round}:{s.ka_steps_per_round}")
    phases = InterleaveSchedule(rounds=2).phases()
    order = [p["phase"] for p in phases]
    expected = ["pretrain", "tvm", "kr_build", "ka", "tvm", "kr_build", "ka"]
    if order != expected:
        return CheckResult("schedule", False, f"phase order {order}")
    return CheckResult("schedule", True,
                       f"ratio {s.tvm_steps_per_round}:{s.ka_steps_per_round}, order ok")


def run_all() -> list[CheckResult]:
    return [check_grad(), check_alias(), check_permutation(), check_masking(),
            check_schedule()]
