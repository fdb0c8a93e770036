"""Synthetic classification tasks with known Bayes-optimal structure.

The needle task plants a class-identifying motif in ONE key's value stream at
a uniformly random time step; everything else is noise. Any model that can
read a full value sequence can solve it; a flattened encoder that truncates
old steps cannot. The crosskey task labels a sequence by whether two
designated keys ever carry the same token at the same step, which a per-key
encoding discards but a per-step encoding keeps.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .objects import ObjectSequence, StructuredObject

NEEDLE_LABEL = "needle"


def _check_positive(**kw) -> list[str]:
    return [f"{name}={value} (need >= 1)" for name, value in kw.items() if value < 1]


def default_noise_words(n: int = 30) -> list[str]:
    return [f"n{i:02d}" for i in range(n)]


def default_motif_words(n_classes: int, words_per_value: int) -> list[list[str]]:
    return [[f"m{c}w{j}" for j in range(words_per_value)] for c in range(n_classes)]


def generate_needle_task(K: int = 8, N: int = 64, words_per_value: int = 4,
                         n_classes: int = 4, n_samples: int = 1000, seed: int = 0,
                         needle_key_index: int = 0, n_noise_words: int = 30,
                         noise_words: list[str] | None = None,
                         motif_words: list[list[str]] | None = None) -> list[ObjectSequence]:
    """Sequences whose label is readable only from one key's motif value."""
    problems = _check_positive(K=K, N=N, words_per_value=words_per_value, n_samples=n_samples)
    if n_classes < 2:
        problems.append(f"n_classes={n_classes} (need >= 2)")
    if not (0 <= needle_key_index < K):
        problems.append(f"needle_key_index={needle_key_index} outside [0, {K})")
    if problems:
        raise ConfigError("invalid needle task config: " + "; ".join(problems))
    if noise_words is None:
        noise_words = default_noise_words(n_noise_words)
    if motif_words is None:
        motif_words = default_motif_words(n_classes, words_per_value)
    if len(motif_words) != n_classes:
        raise ConfigError(f"{len(motif_words)} motifs for {n_classes} classes")
    flat_motifs = {w for motif in motif_words for w in motif}
    if flat_motifs & set(noise_words):
        raise ConfigError(
            "motif words overlap the noise alphabet; labels would be ambiguous: "
            + ", ".join(sorted(flat_motifs & set(noise_words))))
    if len({tuple(m) for m in motif_words}) != n_classes:
        raise ConfigError("motifs must be pairwise distinct")
    if len(noise_words) < 2:
        raise ConfigError("noise alphabet needs at least 2 words")

    keys = [f"key {i}" for i in range(K)]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E64]))
    labels = rng.integers(0, n_classes, size=n_samples)
    steps = rng.integers(0, N, size=n_samples)
    noise_idx = rng.integers(0, len(noise_words), size=(n_samples, N, K, words_per_value))

    out = []
    for i in range(n_samples):
        cls = int(labels[i])
        needle_step = int(steps[i])
        objects = []
        for t in range(N):
            pairs = {}
            for k in range(K):
                if t == needle_step and k == needle_key_index:
                    pairs[keys[k]] = " ".join(motif_words[cls])
                else:
                    pairs[keys[k]] = " ".join(noise_words[w] for w in noise_idx[i, t, k])
            objects.append(StructuredObject(pairs))
        out.append(ObjectSequence(id=f"needle{i:05d}", objects=objects, label=cls))
    return out


def generate_crosskey_task(K: int = 4, N: int = 16, n_samples: int = 1000, seed: int = 0,
                           match_key_indices: tuple[int, int] = (0, 1),
                           n_alphabet: int = 12,
                           alphabet: list[str] | None = None) -> list[ObjectSequence]:
    """Label 1 iff the two designated keys agree at some step, else 0. Balanced."""
    problems = _check_positive(N=N, n_samples=n_samples)
    if K < 2:
        problems.append(f"K={K} (need >= 2 for a cross-key pattern)")
    if problems:
        raise ConfigError("invalid crosskey task config: " + "; ".join(problems))
    a, b = match_key_indices
    if a == b or not (0 <= a < K) or not (0 <= b < K):
        raise ConfigError(f"match_key_indices {match_key_indices} must be two distinct keys below K={K}")
    if alphabet is None:
        alphabet = [f"t{i:02d}" for i in range(n_alphabet)]
    if len(alphabet) < 2:
        raise ConfigError("alphabet needs at least 2 tokens to make a negative instance")
    if len(set(alphabet)) != len(alphabet):
        raise ConfigError("alphabet tokens must be distinct")

    keys = [f"key {i}" for i in range(K)]
    V = len(alphabet)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x636B]))
    n_pos = n_samples // 2
    order = rng.permutation(n_samples)

    out = []
    for i in range(n_samples):
        positive = i < n_pos
        vals = rng.integers(0, V, size=(N, K))
        if positive:
            t_star = int(rng.integers(0, N))
            vals[t_star, b] = vals[t_star, a]
        else:
            clash = vals[:, b] == vals[:, a]
            # shift clashing tokens to a uniformly random different one
            vals[clash, b] = (vals[clash, a] + 1 + rng.integers(0, V - 1, size=int(clash.sum()))) % V
        objects = [StructuredObject({keys[k]: alphabet[vals[t, k]] for k in range(K)})
                   for t in range(N)]
        out.append(ObjectSequence(id=f"crosskey{i:05d}", objects=objects, label=int(positive)))
    return [out[i] for i in order]


def crosskey_scan_label(seq: ObjectSequence, match_key_indices: tuple[int, int] = (0, 1)) -> int:
    """Independent re-derivation of a crosskey label by direct scanning."""
    keys = seq.key_universe()
    ka, kb = (keys[i] for i in match_key_indices)
    for obj in seq.objects:
        if obj.pairs.get(ka) is not None and obj.pairs.get(ka) == obj.pairs.get(kb):
            return 1
    return 0


def generate_budget_scenario(n_keys: int = 11, words_per_value: int = 5,
                             n_steps: int = 105) -> ObjectSequence:
    """A single maximal sequence for budget arithmetic: every key present at
    every step with a fixed-width multi-word value."""
    problems = _check_positive(n_keys=n_keys, words_per_value=words_per_value, n_steps=n_steps)
    if problems:
        raise ConfigError("invalid budget scenario: " + "; ".join(problems))
    value = " ".join(f"w{j}" for j in range(words_per_value))
    objects = [StructuredObject({f"key_{k:02d}": value for k in range(n_keys)})
               for _ in range(n_steps)]
    return ObjectSequence(id="budget", objects=objects, label=None)
