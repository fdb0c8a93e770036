"""Datasets: ingestion, views, vocabulary, template mining, sessions, synthetic tasks."""

from .objects import ObjectSequence, StructuredObject, load_jsonl, write_jsonl
from .vocab import RESERVED_TOKENS, UNK_TOKEN, Vocabulary, tokenize

__all__ = [
    "ObjectSequence", "StructuredObject", "load_jsonl", "write_jsonl",
    "RESERVED_TOKENS", "UNK_TOKEN", "Vocabulary", "tokenize",
]
