"""Masked-value pretraining, key-representation building, and the
interleaved schedule that alternates them with classifier training.

One round is: train the value encoder on masked values (shared heads get
DropHead here and only here), freeze it, re-encode the corpus into key
representations, then train the aggregator and classifier on those. The
2:1 default of value-encoder steps to aggregator steps keeps the shared
heads from drifting toward the (much easier) classification task.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .attention import drophead_factors
from .checkpoint import save_checkpoint
from .data.encoding import KeyCentricData
from .data.vocab import MASK_ID, PAD_ID
from .encoder import TvmKaModel
from .errors import ConfigError, ContractError, NumericError
from .metrics import MetricsReport, evaluate
from .rng import phase_rng
from .tensor import Adam, Tape, Tensor, backward, cross_entropy, no_grad, record

LN2 = float(np.log(2.0))


@dataclass
class MLMBatch:
    input_ids: np.ndarray   # ids with [MASK] substituted at the chosen spots
    target_ids: np.ndarray  # original token ids at those spots, flat
    rows: np.ndarray        # flat row index per target
    cols: np.ndarray        # flat column index per target


def mlm_mask(ids: np.ndarray, value_mask: np.ndarray, rate: float = 0.15,
             rng: np.random.Generator | None = None) -> MLMBatch:
    """Pick value positions to mask and swap in the [MASK] id.

    Only positions flagged in ``value_mask`` are candidates; structural
    tokens are never touched. Every row gets at least one mask even when
    the random draw (or a rate of 0) selects none, because a batch row
    without a prediction target contributes nothing to the loss.
    """
    if rng is None:
        rng = np.random.default_rng()
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"mask rate {rate} outside [0, 1)")
    ids = np.atleast_2d(np.asarray(ids))
    value_mask = np.atleast_2d(np.asarray(value_mask, dtype=bool))
    if ids.shape != value_mask.shape:
        raise ConfigError(f"ids {ids.shape} and value_mask {value_mask.shape} disagree")
    counts = value_mask.sum(axis=1)
    if (counts == 0).any():
        bad = int(np.nonzero(counts == 0)[0][0])
        raise ContractError(f"row {bad} has no value tokens to mask")
    chosen = (rng.random(ids.shape) < rate) & value_mask
    for i in np.nonzero(~chosen.any(axis=1))[0]:
        options = np.nonzero(value_mask[i])[0]
        chosen[i, options[rng.integers(0, options.shape[0])]] = True
    rows, cols = np.nonzero(chosen)
    masked = ids.copy()
    masked[rows, cols] = MASK_ID
    return MLMBatch(input_ids=masked, target_ids=ids[rows, cols].astype(np.int64),
                    rows=rows, cols=cols)


def sample_items(data: KeyCentricData, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, data.n_items, size=batch_size)


def tvm_mlm_step(model: TvmKaModel, data: KeyCentricData, items: np.ndarray,
                 optimizer: Adam, rate: float, drophead_rate: float,
                 rng: np.random.Generator) -> float:
    batch = mlm_mask(data.ids[items], data.value_mask[items], rate, rng)
    allow = batch.input_ids != PAD_ID
    factors = None
    if drophead_rate > 0 and model.config.shared_heads > 0:
        factors = [drophead_factors(model.config.n_heads, model.config.shared_heads,
                                    drophead_rate, rng)
                   for _ in range(model.config.n_layers)]
    model.store.zero_grad()
    with record(Tape()):
        hidden = model.tvm_encode(batch.input_ids, allow=allow, head_factors=factors)
        logits = model.mlm_logits(hidden, batch.rows, batch.cols)
        loss = cross_entropy(logits, batch.target_ids)
        backward(loss)
    optimizer.step()
    return float(loss.data)


def tvm_train_phase(model: TvmKaModel, data: KeyCentricData, steps: int,
                    optimizer: Adam, rng: np.random.Generator,
                    batch_size: int = 8, mlm_rate: float = 0.15,
                    drophead_rate: float | None = None) -> list[float]:
    """Run masked-value training steps; returns the per-step loss trace."""
    if steps < 0:
        raise ConfigError(f"negative step count {steps}")
    if drophead_rate is None:
        drophead_rate = model.config.drophead_rate
    losses = []
    for i in range(steps):
        items = sample_items(data, batch_size, rng)
        try:
            loss = tvm_mlm_step(model, data, items, optimizer, mlm_rate, drophead_rate, rng)
        except NumericError as e:
            raise NumericError(f"masked-value training failed at step {i}: {e}") from e
        if not np.isfinite(loss):
            raise NumericError(f"masked-value loss became non-finite at step {i}")
        losses.append(loss)
    return losses


def build_kr(model: TvmKaModel, data: KeyCentricData,
             seq_indices: np.ndarray | None = None,
             batch_items: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Encode every value sequence of the chosen sequences with the frozen
    value encoder and gather the position-0 states into per-sequence key
    representation matrices.

    Returns ``(kr, key_mask)`` with shapes [n, K_max, d] and [n, K_max];
    the mask covers sequences whose key universe is smaller than K_max.
    """
    if seq_indices is None:
        seq_indices = np.arange(data.n_seqs)
    seq_indices = np.asarray(seq_indices)
    rows = np.concatenate([np.arange(data.item_start[s], data.item_start[s + 1])
                           for s in seq_indices])
    d = model.config.d_model
    reprs = np.empty((rows.shape[0], d), dtype=model.dtype)
    with no_grad():
        for lo in range(0, rows.shape[0], batch_items):
            chunk = rows[lo: lo + batch_items]
            ids = data.ids[chunk]
            keep = ids.shape[1]
            while keep > 1 and (ids[:, keep - 1] == PAD_ID).all():
                keep -= 1
            ids = ids[:, :keep]
            hidden = model.tvm_encode(ids, allow=ids != PAD_ID)
            reprs[lo: lo + chunk.shape[0]] = model.key_representations(hidden).data
    k_max = max(int(data.item_start[s + 1] - data.item_start[s]) for s in seq_indices)
    kr = np.zeros((seq_indices.shape[0], k_max, d), dtype=model.dtype)
    key_mask = np.zeros((seq_indices.shape[0], k_max), dtype=bool)
    offset = 0
    for out_i, s in enumerate(seq_indices):
        k = int(data.item_start[s + 1] - data.item_start[s])
        kr[out_i, :k] = reprs[offset: offset + k]
        key_mask[out_i, :k] = True
        offset += k
    return kr, key_mask


def build_kr_dataset(model: TvmKaModel, data: KeyCentricData,
                     cache_dir: str | None = None, tag: str = "train",
                     batch_items: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Full-corpus key representations, optionally cached on disk.

    The cache file name carries a hash of the encoder weights, so weight
    updates land in a fresh file and stale representations are never
    reused. A hit is also checked against the stored sequence ids.
    """
    if cache_dir is None:
        return build_kr(model, data, batch_items=batch_items)
    state = model.store.state_hash()[:16]
    path = os.path.join(cache_dir, f"kr_{tag}_{state}.npz")
    ids = np.array(data.seq_ids)
    if os.path.exists(path):
        cached = np.load(path, allow_pickle=False)
        if cached["seq_ids"].shape == ids.shape and (cached["seq_ids"] == ids).all():
            return cached["kr"], cached["key_mask"]
    kr, key_mask = build_kr(model, data, batch_items=batch_items)
    os.makedirs(cache_dir, exist_ok=True)
    np.savez(path, kr=kr, key_mask=key_mask, seq_ids=ids)
    return kr, key_mask


def ka_step(model: TvmKaModel, kr: np.ndarray, key_mask: np.ndarray,
            labels: np.ndarray, optimizer: Adam) -> float:
    model.store.zero_grad()
    with record(Tape()):
        pooled = model.ka_aggregate(Tensor(kr, requires_grad=False), key_mask=key_mask)
        loss = cross_entropy(model.classify(pooled), labels)
        backward(loss)
    optimizer.step()
    return float(loss.data)


def ka_train_phase(model: TvmKaModel, kr: np.ndarray, key_mask: np.ndarray,
                   labels: np.ndarray, steps: int, optimizer: Adam,
                   rng: np.random.Generator, batch_size: int = 16) -> list[float]:
    """Train the aggregator and classifier on frozen key representations."""
    if steps < 0:
        raise ConfigError(f"negative step count {steps}")
    labels = np.asarray(labels, dtype=np.int64)
    if kr.shape[0] != labels.shape[0]:
        raise ConfigError(f"{kr.shape[0]} representation rows but {labels.shape[0]} labels")
    losses = []
    for i in range(steps):
        pick = rng.integers(0, kr.shape[0], size=batch_size)
        try:
            loss = ka_step(model, kr[pick], key_mask[pick], labels[pick], optimizer)
        except NumericError as e:
            raise NumericError(f"aggregator training failed at step {i}: {e}") from e
        if not np.isfinite(loss):
            raise NumericError(f"classifier loss became non-finite at step {i}")
        losses.append(loss)
    return losses


def predict_scores(model: TvmKaModel, kr: np.ndarray, key_mask: np.ndarray,
                   batch_size: int = 256) -> np.ndarray:
    scores = np.empty((kr.shape[0], model.config.n_classes), dtype=np.float64)
    with no_grad():
        for lo in range(0, kr.shape[0], batch_size):
            pooled = model.ka_aggregate(Tensor(kr[lo: lo + batch_size], requires_grad=False),
                                        key_mask=key_mask[lo: lo + batch_size])
            scores[lo: lo + batch_size] = model.classify(pooled).data
    return scores


def evaluate_model(model: TvmKaModel, data: KeyCentricData, k: int | None = None,
                   positive_class: int | None = None,
                   batch_items: int = 64) -> MetricsReport:
    """End-to-end evaluation: rebuild key representations with the current
    encoder, classify, and score against the stored labels."""
    if data.labels is None:
        raise ConfigError("evaluation needs labeled sequences")
    kr, key_mask = build_kr(model, data, batch_items=batch_items)
    scores = predict_scores(model, kr, key_mask)
    return evaluate(scores, data.labels, k=k, positive_class=positive_class,
                    lengths=data.n_steps)


@dataclass
class InterleaveSchedule:
    """Step budget for one run. The value-encoder to aggregator ratio
    defaults to 2:1 within every round."""

    rounds: int = 3
    tvm_steps_per_round: int = 400
    ka_steps_per_round: int = 200
    initial_pretrain_steps: int = 600

    def validate(self) -> "InterleaveSchedule":
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        for name in ("tvm_steps_per_round", "ka_steps_per_round", "initial_pretrain_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        return self

    def phases(self) -> list[dict]:
        plan = [{"phase": "pretrain", "round": 0, "steps": self.initial_pretrain_steps}]
        for r in range(1, self.rounds + 1):
            plan.append({"phase": "tvm", "round": r, "steps": self.tvm_steps_per_round})
            plan.append({"phase": "kr_build", "round": r, "steps": 0})
            plan.append({"phase": "ka", "round": r, "steps": self.ka_steps_per_round})
        return plan

    def to_dict(self) -> dict:
        return {"rounds": self.rounds, "tvm_steps_per_round": self.tvm_steps_per_round,
                "ka_steps_per_round": self.ka_steps_per_round,
                "initial_pretrain_steps": self.initial_pretrain_steps}

    @classmethod
    def from_dict(cls, d: dict) -> "InterleaveSchedule":
        known = {f: d[f] for f in ("rounds", "tvm_steps_per_round", "ka_steps_per_round",
                                   "initial_pretrain_steps") if f in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown schedule fields {sorted(unknown)}")
        return cls(**known).validate()


@dataclass
class TrainSettings:
    lr_tvm: float = 1e-3
    lr_ka: float = 1e-3
    batch_tvm: int = 8
    batch_ka: int = 16
    mlm_rate: float = 0.15
    kr_subset: int | None = None   # cap on sequences re-encoded per round
    eval_k: int | None = None
    eval_positive_class: int | None = None

    def validate(self) -> "TrainSettings":
        if self.lr_tvm <= 0 or self.lr_ka <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_tvm < 1 or self.batch_ka < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not 0.0 <= self.mlm_rate < 1.0:
            raise ConfigError(f"mlm_rate {self.mlm_rate} outside [0, 1)")
        return self


@dataclass
class RunResult:
    phase_log: list[dict]
    metrics: list[dict]                 # one record per (round, split)
    losses: dict[str, list[float]]
    final_dev: MetricsReport | None = None


def _append_jsonl(path: str | None, record_: dict) -> None:
    if path is None:
        return
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record_, sort_keys=True) + "\n")


def run_interleaved(model: TvmKaModel, train_data: KeyCentricData,
                    schedule: InterleaveSchedule, seed: int = 0,
                    settings: TrainSettings | None = None,
                    dev_data: KeyCentricData | None = None,
                    out_dir: str | None = None,
                    metrics_path: str | None = None) -> RunResult:
    """Drive the full alternating schedule.

    Setting ``rounds=1`` with the per-round budgets scaled up gives the
    no-interleaving ablation from the same code path: one pretrain, one
    value-encoder phase, one aggregation phase. With ``out_dir`` set, a
    checkpoint lands after every completed phase, so a numeric abort in a
    later phase still leaves the last good state on disk.
    """
    schedule.validate()
    settings = (settings or TrainSettings()).validate()
    if train_data.labels is None:
        raise ConfigError("interleaved training needs labeled training sequences")
    opt_tvm = Adam(model.tvm_parameters(), lr=settings.lr_tvm)
    opt_ka = Adam(model.ka_parameters(), lr=settings.lr_ka)
    phase_log: list[dict] = []
    metrics_records: list[dict] = []
    losses: dict[str, list[float]] = {"pretrain": [], "tvm": [], "ka": []}
    final_dev: MetricsReport | None = None

    def checkpoint(name: str) -> None:
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            save_checkpoint(os.path.join(out_dir, name), model.store,
                            {"kind": "tvm_ka", "model": model.config.to_dict()})

    def log_phase(phase: str, round_: int, steps: int, trace: list[float]) -> None:
        entry = {"phase": phase, "round": round_, "steps": steps}
        if trace:
            entry["mean_loss"] = float(np.mean(trace))
            entry["last_loss"] = float(trace[-1])
        phase_log.append(entry)

    checkpoint("last.ckpt")
    trace = tvm_train_phase(model, train_data, schedule.initial_pretrain_steps, opt_tvm,
                            phase_rng(seed, "mlm.pretrain"), batch_size=settings.batch_tvm,
                            mlm_rate=settings.mlm_rate)
    losses["pretrain"] = trace
    log_phase("pretrain", 0, schedule.initial_pretrain_steps, trace)
    checkpoint("last.ckpt")

    subset_rng = phase_rng(seed, "kr.subsets")
    for r in range(1, schedule.rounds + 1):
        trace = tvm_train_phase(model, train_data, schedule.tvm_steps_per_round, opt_tvm,
                                phase_rng(seed, f"mlm.round{r}"),
                                batch_size=settings.batch_tvm, mlm_rate=settings.mlm_rate)
        losses["tvm"].extend(trace)
        log_phase("tvm", r, schedule.tvm_steps_per_round, trace)
        checkpoint("last.ckpt")

        if settings.kr_subset is not None and settings.kr_subset < train_data.n_seqs:
            seq_idx = subset_rng.choice(train_data.n_seqs, size=settings.kr_subset,
                                        replace=False)
        else:
            seq_idx = np.arange(train_data.n_seqs)
        kr, key_mask = build_kr(model, train_data, seq_idx)
        log_phase("kr_build", r, 0, [])

        trace = ka_train_phase(model, kr, key_mask, train_data.labels[seq_idx],
                               schedule.ka_steps_per_round, opt_ka,
                               phase_rng(seed, f"ka.round{r}"), batch_size=settings.batch_ka)
        losses["ka"].extend(trace)
        log_phase("ka", r, schedule.ka_steps_per_round, trace)
        checkpoint("last.ckpt")
        checkpoint(f"round{r}.ckpt")

        for split, split_data in (("train_subset", None), ("dev", dev_data)):
            if split == "train_subset":
                scores = predict_scores(model, kr, key_mask)
                report = evaluate(scores, train_data.labels[seq_idx], k=settings.eval_k,
                                  positive_class=settings.eval_positive_class,
                                  lengths=train_data.n_steps[seq_idx])
            elif split_data is not None:
                report = evaluate_model(model, split_data, k=settings.eval_k,
                                        positive_class=settings.eval_positive_class)
                final_dev = report
            else:
                continue
            rec = {"round": r, "split": split, **report.to_dict()}
            metrics_records.append(rec)
            _append_jsonl(metrics_path, rec)

    return RunResult(phase_log=phase_log, metrics=metrics_records, losses=losses,
                     final_dev=final_dev)
