"""Deterministic random streams, one per (run seed, phase label).

Every phase draws from its own generator keyed by a stable hash of its label,
so inserting or reordering phases never perturbs the streams of the others.
"""

import hashlib

import numpy as np


def phase_rng(seed: int, label: str) -> np.random.Generator:
    """Generator for one named phase of a seeded run."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, key]))
