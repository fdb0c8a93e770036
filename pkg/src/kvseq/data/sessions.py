"""Event-stream slicing: sessions, milestone windows, purchase-history sampling."""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..errors import ConfigError, ContractError
from .objects import ObjectSequence, StructuredObject


def sessionize(seq: ObjectSequence, timestamps, gap_minutes: float = 15.0) -> list[ObjectSequence]:
    """Split a time-sorted event sequence strictly after gaps > gap_minutes.

    ``timestamps`` are seconds, aligned with ``seq.objects``. A gap of exactly
    ``gap_minutes`` does not split.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    if ts.shape != (len(seq.objects),):
        raise ContractError(
            f"got {ts.shape[0] if ts.ndim else 0} timestamps for {len(seq.objects)} events")
    if len(ts) > 1 and (np.diff(ts) < 0).any():
        bad = int(np.argmax(np.diff(ts) < 0)) + 1
        raise ContractError(f"timestamps not sorted: event {bad} precedes event {bad - 1}")
    limit = gap_minutes * 60.0
    sessions: list[ObjectSequence] = []
    start = 0
    for i in range(1, len(ts)):
        if ts[i] - ts[i - 1] > limit:
            sessions.append(ObjectSequence(id=f"{seq.id}/s{len(sessions)}",
                                           objects=seq.objects[start:i], label=seq.label))
            start = i
    if len(seq.objects):
        sessions.append(ObjectSequence(id=f"{seq.id}/s{len(sessions)}",
                                       objects=seq.objects[start:], label=seq.label))
    return sessions


def _milestone_class(obj: StructuredObject, milestones: dict[str, tuple[str, str]]) -> str | None:
    for cls_name, (key, value) in milestones.items():
        if obj.pairs.get(key) == value:
            return cls_name
    return None


def window_for_milestone(session: ObjectSequence, history: int = 300, horizon: int = 50,
                         milestones: dict[str, tuple[str, str]] | None = None,
                         no_milestone_label: str = "no_milestone") -> ObjectSequence | None:
    """History-window instance labeled by the first milestone in the horizon.

    Input is the first ``history`` steps; the label is the first milestone
    class matched in the following ``horizon`` steps, or the no-milestone
    class. Sessions shorter than history+1 yield None.
    """
    if history < 1 or horizon < 1:
        raise ConfigError(f"history and horizon must be >= 1, got {history}/{horizon}")
    if milestones is None or not milestones:
        raise ConfigError("milestone definitions are required (class -> (key, value))")
    if len(session.objects) < history + 1:
        return None
    label = no_milestone_label
    for obj in session.objects[history:history + horizon]:
        cls_name = _milestone_class(obj, milestones)
        if cls_name is not None:
            label = cls_name
            break
    return ObjectSequence(id=f"{session.id}/w{history}",
                          objects=session.objects[:history], label=label)


def collect_milestone_windows(sessions, history: int = 300, horizon: int = 50,
                              milestones: dict[str, tuple[str, str]] | None = None,
                              no_milestone_rate: float = 1.0,
                              rng: np.random.Generator | None = None,
                              no_milestone_label: str = "no_milestone"):
    """Apply window_for_milestone over sessions, subsampling negatives.

    ``no_milestone_rate`` is the keep probability for no-milestone windows,
    the usual lever against class imbalance. Returns (windows, stats).
    """
    if not (0.0 <= no_milestone_rate <= 1.0):
        raise ConfigError(f"no_milestone_rate must be in [0, 1], got {no_milestone_rate}")
    if rng is None:
        rng = np.random.default_rng(0)
    windows = []
    stats = Counter(skipped_short=0, dropped_no_milestone=0, kept=0)
    for session in sessions:
        w = window_for_milestone(session, history, horizon, milestones, no_milestone_label)
        if w is None:
            stats["skipped_short"] += 1
            continue
        if w.label == no_milestone_label and rng.random() >= no_milestone_rate:
            stats["dropped_no_milestone"] += 1
            continue
        stats["kept"] += 1
        windows.append(w)
    return windows, dict(stats)


def sample_instacart_style(user_histories: dict[str, list[StructuredObject]],
                           min_hist: int = 50, max_hist: int = 200,
                           min_target_count: int = 50, product_key: str = "product_id",
                           rng: np.random.Generator | None = None):
    """Next-purchase instances from per-user product histories.

    For each user the final purchase is the prediction target; the input is a
    uniformly sized window of the immediately preceding purchases, between
    ``min_hist`` and ``max_hist`` long. Users with too little history are
    skipped, as are targets whose product occurs fewer than
    ``min_target_count`` times across all users. Returns (instances, stats).
    """
    if not (1 <= min_hist <= max_hist):
        raise ConfigError(f"need 1 <= min_hist <= max_hist, got {min_hist}/{max_hist}")
    if rng is None:
        rng = np.random.default_rng(0)
    counts: Counter[str] = Counter()
    for purchases in user_histories.values():
        for obj in purchases:
            if product_key in obj.pairs:
                counts[obj.pairs[product_key]] += 1
    instances = []
    stats = Counter(users=0, skipped_short=0, skipped_missing_key=0,
                    skipped_rare_target=0, emitted=0)
    for uid, purchases in user_histories.items():
        stats["users"] += 1
        t = len(purchases) - 1
        if t < min_hist:
            stats["skipped_short"] += 1
            continue
        target = purchases[t]
        if product_key not in target.pairs:
            stats["skipped_missing_key"] += 1
            continue
        product = target.pairs[product_key]
        if counts[product] < min_target_count:
            stats["skipped_rare_target"] += 1
            continue
        h = int(rng.integers(min_hist, min(max_hist, t) + 1))
        instances.append(ObjectSequence(id=f"user{uid}", objects=purchases[t - h:t], label=product))
        stats["emitted"] += 1
    return instances, dict(stats)
