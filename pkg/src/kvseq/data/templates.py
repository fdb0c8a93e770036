"""Fixed-depth prefix-tree log template mining, in the Drain family.

Lines are whitespace-tokenized; any token containing a digit is masked to the
wildcard ``<*>`` immediately, so numerals, ids and addresses become value
slots without needing a second example line. Masked token lists are routed
root -> token count -> first (depth-2) tokens -> leaf, and merged into the
most similar leaf cluster when similarity (exact literal matches / length)
reaches the threshold; positions that disagree degrade to wildcards.

``structure_log_line`` turns one raw log line into a structured object: header
fields, the template's slot values under caller-assigned key names, the line
number, and an event id derived from the template text.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from ..errors import ConfigError
from .objects import StructuredObject

WILDCARD = "<*>"

# <Date> <Time> <Pid> <Level> <Component>: <Content>
_HEADER_RE = re.compile(r"^(\d+)\s+(\d+)\s+(\d+)\s+(\S+)\s+(\S+):\s+(.*)$")

_HAS_DIGIT = re.compile(r"\d")


@dataclass
class LogTemplate:
    id: str
    tokens: list[str]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def n_slots(self) -> int:
        return sum(1 for t in self.tokens if t == WILDCARD)


def template_id(tokens: list[str]) -> str:
    return hashlib.md5(" ".join(tokens).encode("utf-8")).hexdigest()[:8]


def _mask(tokens: list[str]) -> list[str]:
    return [WILDCARD if _HAS_DIGIT.search(t) else t for t in tokens]


def _similarity(template: list[str], tokens: list[str]) -> float:
    """Fraction of positions where a literal template token matches exactly."""
    if len(template) != len(tokens):
        return 0.0
    if not template:
        return 1.0
    hits = sum(1 for a, b in zip(template, tokens) if a != WILDCARD and a == b)
    return hits / len(template)


class TemplateMiner:
    """Streaming miner; feed lines in order, then read ``templates``."""

    def __init__(self, depth: int = 4, sim_threshold: float = 0.5):
        if depth < 3:
            raise ConfigError(f"tree depth must be >= 3, got {depth}")
        if not (0 < sim_threshold <= 1):
            raise ConfigError(f"sim_threshold must be in (0, 1], got {sim_threshold}")
        self.depth = depth
        self.sim_threshold = sim_threshold
        self._tree: dict = {}
        self._clusters: list[list[str]] = []

    def _leaf(self, masked: list[str]) -> list[int]:
        node = self._tree.setdefault(len(masked), {})
        for tok in masked[: self.depth - 2]:
            node = node.setdefault(tok, {})
        # None cannot collide with a real token
        return node.setdefault(None, [])

    def add_line(self, line: str) -> None:
        tokens = line.split()
        if not tokens:
            return
        masked = _mask(tokens)
        leaf = self._leaf(masked)
        best, best_sim = None, -1.0
        for ci in leaf:
            sim = _similarity(self._clusters[ci], masked)
            if sim > best_sim:
                best, best_sim = ci, sim
        if best is not None and best_sim >= self.sim_threshold:
            tmpl = self._clusters[best]
            self._clusters[best] = [a if a == b else WILDCARD for a, b in zip(tmpl, masked)]
        else:
            leaf.append(len(self._clusters))
            self._clusters.append(masked)

    @property
    def templates(self) -> list[LogTemplate]:
        out, seen = [], set()
        for tokens in self._clusters:
            tid = template_id(tokens)
            if tid not in seen:
                seen.add(tid)
                out.append(LogTemplate(id=tid, tokens=list(tokens)))
        return out


def mine_log_templates(lines, depth: int = 4, sim_threshold: float = 0.5) -> list[LogTemplate]:
    miner = TemplateMiner(depth=depth, sim_threshold=sim_threshold)
    for line in lines:
        miner.add_line(line)
    return miner.templates


def split_header(line: str) -> tuple[dict[str, str] | None, str]:
    """Separate the date/time/pid/level/component prefix from the message body."""
    m = _HEADER_RE.match(line.strip())
    if not m:
        return None, line.strip()
    date, time, pid, level, component, content = m.groups()
    header = {
        "Date": str(int(date)),
        "Time": str(int(time)),
        "Pid": str(int(pid)),
        "Level": level,
        "Component": component,
    }
    return header, content


def match_template(templates: list[LogTemplate], content: str,
                   sim_threshold: float = 0.5) -> tuple[LogTemplate | None, list[str]]:
    """Best same-length template with similarity over threshold, plus slot values."""
    tokens = content.split()
    masked = _mask(tokens)
    best, best_sim = None, -1.0
    for tmpl in templates:
        sim = _similarity(tmpl.tokens, masked)
        if sim > best_sim:
            best, best_sim = tmpl, sim
    if best is None or best_sim < sim_threshold:
        return None, []
    slots = [tokens[i] for i, t in enumerate(best.tokens) if t == WILDCARD]
    return best, slots


def structure_log_line(line: str, templates: list[LogTemplate], key_names: dict,
                       line_id: int, sim_threshold: float = 0.5) -> StructuredObject:
    """One log line -> structured object.

    ``key_names`` maps template id to either the ordered slot key-name list or
    an object {"keys": [...], "status": "..."} when the template also carries a
    human-assigned status text. Lines matching no template fall back to a
    single ``raw_message`` pair.
    """
    header, content = split_header(line)
    tmpl, slots = match_template(templates, content, sim_threshold)
    pairs: dict[str, str] = {}
    if tmpl is None:
        pairs["raw_message"] = content
    else:
        entry = key_names.get(tmpl.id)
        status = None
        if isinstance(entry, dict):
            status = entry.get("status")
            keys = entry.get("keys", [])
        elif entry is None:
            keys = [f"var_{i}" for i in range(len(slots))]
        else:
            keys = list(entry)
        if len(keys) != len(slots):
            raise ConfigError(
                f"template {tmpl.id} has {len(slots)} slots but {len(keys)} key names assigned"
            )
        if status is not None:
            pairs["status"] = status
        for k, v in zip(keys, slots):
            pairs[k] = v
    pairs["LineId"] = str(line_id)
    if header is not None:
        pairs.update(header)
    if tmpl is not None:
        pairs["EventId"] = tmpl.id
    return StructuredObject(pairs)
