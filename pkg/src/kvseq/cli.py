"""Command-line front end: prepare, train, eval, verify, budget.

One JSON config per run; individual fields can be overridden on the
command line by dotted path (``--set encoder.d_model=32``). Every command
is deterministic given config plus seed. Exit codes: 0 success, 1 invalid
input or config, 2 runtime failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from collections import Counter

import numpy as np

from .baselines import (
    MODEL_KINDS, build_baseline, evaluate_flattened, evaluate_record, load_any_model,
    predict_flattened, predict_record, save_model, train_flattened, train_record,
)
from .data.encoding import LabelMap, encode_flattened, encode_key_centric, encode_record
from .data.objects import ObjectSequence, StructuredObject, load_jsonl, write_jsonl
from .data.sessions import collect_milestone_windows, sample_instacart_style, sessionize
from .data.synthetic import generate_crosskey_task, generate_needle_task
from .data.templates import mine_log_templates, split_header, structure_log_line
from .data.views import VIEWS, budget_report, view_lengths
from .data.vocab import Vocabulary, vocab_from_sequences
from .encoder import ModelConfig, TvmKaModel
from .errors import ConfigError, KvseqError, NumericError
from .metrics import MetricsReport
from .rng import phase_rng
from .tensor import Adam
from .training import (
    InterleaveSchedule, TrainSettings, evaluate_model, run_interleaved,
)
from . import reporting, verify

RUN_ROOT_ENV = "KVSEQ_RUN_ROOT"

DEFAULT_CONFIG = {
    "model": "tvm_ka",
    "seed": 0,
    "run_name": "run",
    "out_dir": None,
    "encoder": {
        "vocab_size": 0,       # 0 = fill in from the training vocabulary
        "n_classes": 0,        # 0 = fill in from the training labels
        "d_model": 64,
        "n_heads": 4,
        "n_layers": 2,
        "d_ff": 128,
        "max_positions": 512,
        "shared_heads": 2,
        "drophead_rate": 0.2,
        "dtype": "float32",
    },
    "schedule": {
        "rounds": 3,
        "tvm_steps_per_round": 400,
        "ka_steps_per_round": 200,
        "initial_pretrain_steps": 600,
    },
    "train": {
        "lr_tvm": 1e-3,
        "lr_ka": 1e-3,
        "batch_tvm": 8,
        "batch_ka": 16,
        "mlm_rate": 0.15,
        "kr_subset": None,
        "eval_k": None,
        "eval_subset": None,
        "steps": 1500,         # baseline task training budget
        "batch": 16,
        "lr": 1e-3,
    },
    "data": {
        "train": None,
        "dev": None,
        "test": None,
        "max_tokens": 512,     # flattened-view truncation cap
    },
}


# ---------------------------------------------------------------------------
# config plumbing


def _merge_defaults(user: dict, defaults: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    problems = []
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in defaults:
            problems.append(f"unknown config field {where!r}")
            continue
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                problems.append(f"{where} must be an object")
                continue
            try:
                out[key] = _merge_defaults(value, defaults[key], f"{where}.")
            except ConfigError as e:
                problems.append(str(e))
        else:
            out[key] = value
    if problems:
        raise ConfigError("; ".join(problems))
    return out


def apply_override(config: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} must look like dotted.path=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r}: {part!r} is not a config section")
        node = nxt
    if parts[-1] not in node:
        raise ConfigError(f"override {key!r}: no such config field")
    node[parts[-1]] = value


def load_run_config(path: str, overrides: list[str]) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e.msg} (line {e.lineno})") from e
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    config = _merge_defaults(user, DEFAULT_CONFIG)
    for assignment in overrides:
        apply_override(config, assignment)
    validate_run_config(config)
    return config


def validate_run_config(config: dict) -> None:
    """Collect every problem before failing, so one pass reports them all."""
    problems = []
    if config["model"] not in MODEL_KINDS:
        problems.append(f"model {config['model']!r} not one of {list(MODEL_KINDS)}")
    if not isinstance(config["seed"], int):
        problems.append("seed must be an integer")
    try:
        InterleaveSchedule.from_dict(config["schedule"])
    except ConfigError as e:
        problems.append(str(e))
    enc = dict(config["encoder"])
    # defer corpus-derived sizes; validate the rest with stand-ins
    enc["vocab_size"] = enc["vocab_size"] or 8
    enc["n_classes"] = enc["n_classes"] or 2
    try:
        ModelConfig.from_dict(enc)
    except ConfigError as e:
        problems.append(str(e))
    tr = config["train"]
    for name in ("lr_tvm", "lr_ka", "lr"):
        if not tr[name] > 0:
            problems.append(f"train.{name} must be positive")
    for name in ("batch_tvm", "batch_ka", "batch", "steps"):
        if not isinstance(tr[name], int) or tr[name] < 1:
            problems.append(f"train.{name} must be a positive integer")
    if not 0.0 <= tr["mlm_rate"] < 1.0:
        problems.append("train.mlm_rate must be in [0, 1)")
    if config["data"]["train"] is None:
        problems.append("data.train path is required")
    if config["model"] == "flattened" and \
            config["data"]["max_tokens"] > config["encoder"]["max_positions"]:
        problems.append("data.max_tokens exceeds encoder.max_positions")
    if problems:
        raise ConfigError("; ".join(problems))


def resolve_run_dir(config: dict) -> str:
    if config.get("out_dir"):
        return config["out_dir"]
    root = os.environ.get(RUN_ROOT_ENV, "runs")
    return os.path.join(root, config["run_name"])


def _write_json(path: str, payload) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared data loading


def _load_split(config: dict, split: str) -> list[ObjectSequence]:
    path = config["data"].get(split)
    if path is None:
        raise ConfigError(f"data.{split} path is not set in the config")
    return load_jsonl(path)


def _encode_for_model(kind: str, seqs, vocab, label_map, max_tokens: int):
    if kind == "tvm_ka":
        return encode_key_centric(seqs, vocab, label_map)
    if kind == "flattened":
        return encode_flattened(seqs, vocab, max_tokens, label_map)
    return encode_record(seqs, vocab, label_map)


def _split_fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"splits {text!r} must be three comma-separated numbers") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-6:
        raise ConfigError(f"splits {text!r} must be three fractions summing to 1")
    return tuple(parts)


def _shuffled_splits(items: list, fractions, seed: int):
    rng = phase_rng(seed, "prepare.split")
    order = rng.permutation(len(items))
    n_train = int(round(fractions[0] * len(items)))
    n_dev = int(round(fractions[1] * len(items)))
    picks = [order[:n_train], order[n_train:n_train + n_dev], order[n_train + n_dev:]]
    return [[items[i] for i in p] for p in picks]


def _label_histogram(seqs) -> dict:
    return dict(sorted(Counter(str(s.label) for s in seqs).items()))


def _write_split_files(out_dir: str, splits: dict[str, list[ObjectSequence]],
                       extra_stats: dict | None = None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    stats = {"splits": {}}
    for name, seqs in splits.items():
        write_jsonl(os.path.join(out_dir, f"{name}.jsonl"), seqs)
        stats["splits"][name] = {"sequences": len(seqs),
                                 "labels": _label_histogram(seqs)}
    if extra_stats:
        stats.update(extra_stats)
    _write_json(os.path.join(out_dir, "stats.json"), stats)
    return stats


# ---------------------------------------------------------------------------
# prepare


def cmd_prepare_synthetic(args) -> int:
    sizes = (args.train_size, args.dev_size, args.test_size)
    total = sum(sizes)
    if total < 1:
        raise ConfigError("at least one sample across the three splits is required")
    if args.task == "needle":
        seqs = generate_needle_task(K=args.keys, N=args.steps,
                                    words_per_value=args.words_per_value,
                                    n_classes=args.classes, n_samples=total,
                                    seed=args.seed)
    else:
        seqs = generate_crosskey_task(K=args.keys, N=args.steps, n_samples=total,
                                      seed=args.seed, n_alphabet=args.alphabet_size)
    splits = {"train": seqs[: sizes[0]],
              "dev": seqs[sizes[0]: sizes[0] + sizes[1]],
              "test": seqs[sizes[0] + sizes[1]:]}
    stats = _write_split_files(args.out, splits, {"task": args.task, "seed": args.seed})
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_prepare_logs(args) -> int:
    with open(args.input, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    key_names = {}
    if args.key_names:
        with open(args.key_names, "r", encoding="utf-8") as fh:
            key_names = json.load(fh)
    contents = [split_header(line)[1] for line in lines]
    templates = mine_log_templates(contents, depth=args.depth,
                                   sim_threshold=args.sim_threshold)
    objects = [structure_log_line(line, templates, key_names, line_id=i + 1,
                                  sim_threshold=args.sim_threshold)
               for i, line in enumerate(lines)]
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "structured.jsonl")
    with open(out_path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(json.dumps(obj.pairs, ensure_ascii=False) + "\n")
    _write_json(os.path.join(args.out, "templates.json"),
                [{"id": t.id, "template": t.text, "slots": t.n_slots}
                 for t in templates])
    matched = sum(1 for o in objects if "EventId" in o.pairs)
    stats = {"lines": len(lines), "templates": len(templates),
             "matched": matched, "unmatched": len(lines) - matched}
    _write_json(os.path.join(args.out, "stats.json"), stats)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def _read_flat_objects(path: str) -> list[StructuredObject]:
    from .data.objects import _coerce_value
    objects = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}:{line_no}: expected one JSON object per line")
            objects.append(StructuredObject(
                {str(k): _coerce_value(v, path, line_no, k) for k, v in doc.items()}))
    return objects


def cmd_prepare_sessions(args) -> int:
    objects = _read_flat_objects(args.input)
    groups: dict[str, list[StructuredObject]] = {}
    for obj in objects:
        gid = obj.get(args.group_by)
        if gid is None:
            continue
        groups.setdefault(gid, []).append(obj)
    sessions = []
    for gid in sorted(groups):
        members = groups[gid]
        if args.time_key:
            members = sorted(members, key=lambda o: float(o.pairs[args.time_key]))
            seq = ObjectSequence(id=gid, objects=members)
            times = [float(o.pairs[args.time_key]) for o in members]
            sessions.extend(sessionize(seq, times, gap_minutes=args.gap_minutes))
        else:
            sessions.append(ObjectSequence(id=gid, objects=members))
    extra = {"groups": len(groups), "sessions": len(sessions)}
    if args.milestones:
        with open(args.milestones, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        milestones = {cls: (kv[0], kv[1]) for cls, kv in raw.items()}
        windows, stats = collect_milestone_windows(
            sessions, history=args.history, horizon=args.horizon,
            milestones=milestones, no_milestone_rate=args.no_milestone_rate,
            rng=phase_rng(args.seed, "prepare.milestones"))
        sessions = windows
        extra["window_stats"] = stats
    train, dev, test = _shuffled_splits(sessions, _split_fractions(args.splits), args.seed)
    stats = _write_split_files(args.out, {"train": train, "dev": dev, "test": test}, extra)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_prepare_instacart(args) -> int:
    histories: dict[str, list[StructuredObject]] = {}
    with open(args.input, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if not isinstance(doc, dict) or "user" not in doc or "orders" not in doc:
                raise ConfigError(
                    f"{args.input}:{line_no}: each line needs 'user' and 'orders'")
            from .data.objects import _coerce_value
            histories[str(doc["user"])] = [
                StructuredObject({str(k): _coerce_value(v, args.input, line_no, k)
                                  for k, v in order.items()})
                for order in doc["orders"]]
    instances, sample_stats = sample_instacart_style(
        histories, min_hist=args.min_hist, max_hist=args.max_hist,
        min_target_count=args.min_target_count, product_key=args.product_key,
        rng=phase_rng(args.seed, "prepare.instacart"))
    train, dev, test = _shuffled_splits(instances, _split_fractions(args.splits), args.seed)
    stats = _write_split_files(args.out, {"train": train, "dev": dev, "test": test},
                               {"sampling": sample_stats})
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# train


def _train_tvm_ka(config: dict, run_dir: str, seqs, dev_seqs, vocab, label_map) -> dict:
    enc = dict(config["encoder"])
    enc["vocab_size"] = enc["vocab_size"] or len(vocab)
    enc["n_classes"] = enc["n_classes"] or len(label_map)
    model_config = ModelConfig.from_dict(enc)
    config["encoder"] = model_config.to_dict()
    model = TvmKaModel(model_config, seed=config["seed"])
    data = encode_key_centric(seqs, vocab, label_map)
    dev = None
    if dev_seqs:
        cap = config["train"]["eval_subset"]
        dev = encode_key_centric(dev_seqs[:cap] if cap else dev_seqs, vocab, label_map)
    tr = config["train"]
    settings = TrainSettings(lr_tvm=tr["lr_tvm"], lr_ka=tr["lr_ka"],
                             batch_tvm=tr["batch_tvm"], batch_ka=tr["batch_ka"],
                             mlm_rate=tr["mlm_rate"], kr_subset=tr["kr_subset"],
                             eval_k=tr["eval_k"])
    schedule = InterleaveSchedule.from_dict(config["schedule"])
    result = run_interleaved(model, data, schedule, seed=config["seed"],
                             settings=settings, dev_data=dev, out_dir=run_dir,
                             metrics_path=os.path.join(run_dir, "metrics.jsonl"))
    return {"phase_log": result.phase_log, "metrics": result.metrics,
            "losses": result.losses}


def _train_baseline(config: dict, run_dir: str, seqs, dev_seqs, vocab, label_map) -> dict:
    kind = config["model"]
    enc = dict(config["encoder"])
    enc["vocab_size"] = enc["vocab_size"] or len(vocab)
    enc["n_classes"] = enc["n_classes"] or len(label_map)
    model_config = ModelConfig.from_dict(enc)
    config["encoder"] = model_config.to_dict()
    max_tokens = config["data"]["max_tokens"]
    data = _encode_for_model(kind, seqs, vocab, label_map, max_tokens)
    n_keys = data.n_keys if kind.startswith("record_") else None
    model = build_baseline(kind, model_config, seed=config["seed"], n_keys=n_keys)
    save_model(os.path.join(run_dir, "last.ckpt"), model)

    tr = config["train"]
    optimizer = Adam(model.parameters(), lr=tr["lr"])
    rng = phase_rng(config["seed"], "task")
    losses: list[float] = []
    remaining = tr["steps"]
    while remaining > 0:
        chunk = min(200, remaining)
        if kind == "flattened":
            losses.extend(train_flattened(model, data, chunk, optimizer, rng,
                                          batch_size=tr["batch"]))
        else:
            losses.extend(train_record(model, data, chunk, optimizer, rng,
                                       batch_size=tr["batch"]))
        remaining -= chunk
        save_model(os.path.join(run_dir, "last.ckpt"), model)

    metrics = []
    for split_name, split_seqs in (("train", seqs), ("dev", dev_seqs)):
        if not split_seqs:
            continue
        split_data = _encode_for_model(kind, split_seqs, vocab, label_map, max_tokens)
        if kind == "flattened":
            report = evaluate_flattened(model, split_data, k=tr["eval_k"])
        else:
            report = evaluate_record(model, split_data, k=tr["eval_k"])
        metrics.append({"round": 1, "split": split_name, **report.to_dict()})
    with open(os.path.join(run_dir, "metrics.jsonl"), "w", encoding="utf-8") as fh:
        for rec in metrics:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    phase_log = [{"phase": "task", "round": 1, "steps": tr["steps"],
                  "mean_loss": float(np.mean(losses)) if losses else None}]
    return {"phase_log": phase_log, "metrics": metrics, "losses": {"task": losses}}


def cmd_train(args) -> int:
    config = load_run_config(args.config, args.set or [])
    schedule = InterleaveSchedule.from_dict(config["schedule"])
    if args.dry_run:
        print(json.dumps({"config": config, "run_dir": resolve_run_dir(config),
                          "phases": schedule.phases()}, indent=2, sort_keys=True))
        return 0
    run_dir = resolve_run_dir(config)
    os.makedirs(run_dir, exist_ok=True)

    seqs = _load_split(config, "train")
    dev_seqs = load_jsonl(config["data"]["dev"]) if config["data"]["dev"] else []
    vocab = vocab_from_sequences(seqs)
    label_map = LabelMap.from_sequences(seqs)
    _write_json(os.path.join(run_dir, "vocab.json"), vocab.to_dict())
    _write_json(os.path.join(run_dir, "labels.json"), label_map.to_dict())

    if config["model"] == "tvm_ka":
        outcome = _train_tvm_ka(config, run_dir, seqs, dev_seqs, vocab, label_map)
    else:
        outcome = _train_baseline(config, run_dir, seqs, dev_seqs, vocab, label_map)

    _write_json(os.path.join(run_dir, "config.json"), config)
    _write_json(os.path.join(run_dir, "phase_log.json"), outcome["phase_log"])
    reporting.metrics_csv(outcome["metrics"], os.path.join(run_dir, "metrics.csv"))
    figures = os.path.join(run_dir, "figures")
    reporting.loss_figure(outcome["losses"], os.path.join(figures, "loss.png"))
    if outcome["metrics"]:
        reporting.metrics_round_figure(outcome["metrics"],
                                       os.path.join(figures, "rounds.png"))
    for entry in outcome["phase_log"]:
        print(json.dumps(entry, sort_keys=True))
    print(f"run directory: {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _eval_tvm_ka(model, seqs, vocab, label_map, k):
    data = encode_key_centric(seqs, vocab, label_map)
    return evaluate_model(model, data, k=k)


def cmd_eval(args) -> int:
    run_dir = args.run
    config_path = os.path.join(run_dir, "config.json")
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"{config_path}: no resolved config; is this a run directory?")
    with open(config_path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    ckpt = os.path.join(run_dir, args.checkpoint)
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"{ckpt}: checkpoint not found")
    with open(os.path.join(run_dir, "vocab.json"), "r", encoding="utf-8") as fh:
        vocab = Vocabulary.from_dict(json.load(fh))
    with open(os.path.join(run_dir, "labels.json"), "r", encoding="utf-8") as fh:
        label_map = LabelMap.from_dict(json.load(fh))

    k = args.k if args.k is not None else config["train"]["eval_k"]
    n_classes = config["encoder"]["n_classes"]
    if k is not None and not 1 <= k <= n_classes:
        raise ConfigError(f"k={k} outside [1, n_classes={n_classes}]")

    seqs = load_jsonl(args.data) if args.data else _load_split(config, args.split)
    model = load_any_model(ckpt)
    kind = config["model"]
    if kind == "tvm_ka":
        report = _eval_tvm_ka(model, seqs, vocab, label_map, k)
    else:
        data = _encode_for_model(kind, seqs, vocab, label_map,
                                 config["data"]["max_tokens"])
        if kind == "flattened":
            report = evaluate_flattened(model, data, k=k)
        else:
            report = evaluate_record(model, data, k=k)

    payload = {"split": args.split, "checkpoint": args.checkpoint, **report.to_dict()}
    print(json.dumps(payload, indent=2, sort_keys=True))
    _write_json(os.path.join(run_dir, f"eval_{args.split}.json"), payload)
    reporting.per_class_figure(payload, os.path.join(run_dir, "figures",
                                                     f"eval_{args.split}.png"))
    return 0


# ---------------------------------------------------------------------------
# verify and budget


def cmd_verify(args) -> int:
    if not args.float64:
        print("error: the gradient check runs in 64-bit mode only; pass --float64 "
              "to acknowledge", file=sys.stderr)
        return 1
    results = verify.run_all()
    if args.json:
        print(json.dumps([r.to_dict() for r in results], indent=2))
    else:
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 3


def cmd_budget(args) -> int:
    seqs = load_jsonl(args.data)
    report = budget_report(seqs, args.view, cap=args.cap)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        lengths = view_lengths(seqs, args.view)
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "budget.json"), report)
        with open(os.path.join(args.out, "budget_lengths.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write("sequence_id,positions\n")
            for seq, n in zip(seqs, lengths):
                fh.write(f"{seq.id},{int(n)}\n")
        reporting.budget_figure(lengths, args.view, args.cap,
                                os.path.join(args.out, "budget.png"))
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvseq",
        description="Key-centric sequence modeling: data prep, training, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    prep = sub.add_parser("prepare", help="build train/dev/test JSONL datasets")
    prep_sub = prep.add_subparsers(dest="source", required=True)

    p_syn = prep_sub.add_parser("synthetic", help="generated diagnostic tasks")
    p_syn.add_argument("--task", choices=["needle", "crosskey"], required=True)
    p_syn.add_argument("--out", required=True)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--keys", type=int, default=8)
    p_syn.add_argument("--steps", type=int, default=64)
    p_syn.add_argument("--words-per-value", type=int, default=4)
    p_syn.add_argument("--classes", type=int, default=4)
    p_syn.add_argument("--alphabet-size", type=int, default=12)
    p_syn.add_argument("--train-size", type=int, default=8000)
    p_syn.add_argument("--dev-size", type=int, default=1000)
    p_syn.add_argument("--test-size", type=int, default=1000)
    p_syn.set_defaults(func=cmd_prepare_synthetic)

    p_logs = prep_sub.add_parser("logs", help="structure raw log lines")
    p_logs.add_argument("--input", required=True)
    p_logs.add_argument("--out", required=True)
    p_logs.add_argument("--key-names", default=None,
                        help="JSON mapping template id -> slot key names")
    p_logs.add_argument("--sim-threshold", type=float, default=0.5)
    p_logs.add_argument("--depth", type=int, default=4)
    p_logs.set_defaults(func=cmd_prepare_logs)

    p_sess = prep_sub.add_parser("sessions", help="group structured events into sequences")
    p_sess.add_argument("--input", required=True)
    p_sess.add_argument("--out", required=True)
    p_sess.add_argument("--group-by", required=True)
    p_sess.add_argument("--time-key", default=None)
    p_sess.add_argument("--gap-minutes", type=float, default=15.0)
    p_sess.add_argument("--milestones", default=None,
                        help="JSON mapping class -> [key, value]")
    p_sess.add_argument("--history", type=int, default=300)
    p_sess.add_argument("--horizon", type=int, default=50)
    p_sess.add_argument("--no-milestone-rate", type=float, default=1.0)
    p_sess.add_argument("--splits", default="0.8,0.1,0.1")
    p_sess.add_argument("--seed", type=int, default=0)
    p_sess.set_defaults(func=cmd_prepare_sessions)

    p_inst = prep_sub.add_parser("instacart", help="next-purchase instances from histories")
    p_inst.add_argument("--input", required=True)
    p_inst.add_argument("--out", required=True)
    p_inst.add_argument("--min-hist", type=int, default=50)
    p_inst.add_argument("--max-hist", type=int, default=200)
    p_inst.add_argument("--min-target-count", type=int, default=50)
    p_inst.add_argument("--product-key", default="product_id")
    p_inst.add_argument("--splits", default="0.8,0.1,0.1")
    p_inst.add_argument("--seed", type=int, default=0)
    p_inst.set_defaults(func=cmd_prepare_instacart)

    p_train = sub.add_parser("train", help="run a training config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--set", action="append", metavar="PATH=VALUE",
                         help="override a config field by dotted path")
    p_train.add_argument("--dry-run", action="store_true",
                         help="print the resolved config and schedule, then exit")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a run directory on a split")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--checkpoint", default="last.ckpt")
    p_eval.add_argument("--k", type=int, default=None)
    p_eval.add_argument("--data", default=None,
                        help="explicit JSONL path instead of the config's split path")
    p_eval.set_defaults(func=cmd_eval)

    p_verify = sub.add_parser("verify", help="run the built-in oracle suite")
    p_verify.add_argument("--float64", action="store_true",
                          help="acknowledge 64-bit mode (required for the grad check)")
    p_verify.add_argument("--json", action="store_true")
    p_verify.set_defaults(func=cmd_verify)

    p_budget = sub.add_parser("budget", help="token-position budget for a corpus view")
    p_budget.add_argument("--data", required=True)
    p_budget.add_argument("--view", required=True,
                          help=f"one of {', '.join(VIEWS)}")
    p_budget.add_argument("--cap", type=int, default=None)
    p_budget.add_argument("--out", default=None)
    p_budget.set_defaults(func=cmd_budget)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    except KvseqError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
