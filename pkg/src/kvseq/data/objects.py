"""Semi-structured object sequences and their JSON-lines serialization.

One line per sequence: {"id": ..., "label": ..., "objects": [{key: value, ...}, ...]}.
Values may arrive as strings, numbers, or booleans and are coerced to strings;
anything else is rejected with the offending line number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import FormatError


@dataclass
class StructuredObject:
    """One time step: an ordered key -> value map (values are strings)."""

    pairs: dict[str, str] = field(default_factory=dict)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.pairs.get(key, default)

    def __contains__(self, key: str) -> bool:
        return key in self.pairs


@dataclass
class ObjectSequence:
    """Time-ordered objects plus an optional task label."""

    id: str
    objects: list[StructuredObject]
    label: int | str | None = None

    def __len__(self) -> int:
        return len(self.objects)

    def key_universe(self) -> list[str]:
        """All keys across all steps, in first-seen order."""
        seen: dict[str, None] = {}
        for obj in self.objects:
            for k in obj.pairs:
                seen.setdefault(k, None)
        return list(seen)


def _coerce_value(v, path, line_no: int, key: str) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return str(v)
    raise FormatError(
        f"{path}:{line_no}: value for key {key!r} has unsupported type {type(v).__name__}"
    )


def load_jsonl(path) -> list[ObjectSequence]:
    """Parse a JSON-lines file of object sequences."""
    sequences = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{line_no}: invalid JSON: {e.msg}") from e
            if not isinstance(doc, dict):
                raise FormatError(f"{path}:{line_no}: expected a JSON object, got {type(doc).__name__}")
            if "id" not in doc:
                raise FormatError(f"{path}:{line_no}: missing required field 'id'")
            objects = doc.get("objects")
            if not isinstance(objects, list) or not objects:
                raise FormatError(f"{path}:{line_no}: 'objects' must be a non-empty list")
            steps = []
            for i, obj in enumerate(objects):
                if not isinstance(obj, dict):
                    raise FormatError(f"{path}:{line_no}: objects[{i}] is not a JSON object")
                pairs = {str(k): _coerce_value(v, path, line_no, k) for k, v in obj.items()}
                steps.append(StructuredObject(pairs))
            label = doc.get("label")
            if label is not None and not isinstance(label, (int, str)):
                raise FormatError(f"{path}:{line_no}: label must be an integer or string")
            sequences.append(ObjectSequence(id=str(doc["id"]), objects=steps, label=label))
    return sequences


def write_jsonl(path, sequences: list[ObjectSequence]) -> None:
    """Inverse of load_jsonl; sorted JSON keys are not used so key order survives."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for seq in sequences:
            doc = {"id": seq.id, "objects": [obj.pairs for obj in seq.objects]}
            if seq.label is not None:
                doc["label"] = seq.label
            f.write(json.dumps(doc, ensure_ascii=False) + "\n")
