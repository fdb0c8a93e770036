"""JSONL ingestion and the object-sequence domain type."""

import numpy as np
import pytest

from kvseq.data import ObjectSequence, StructuredObject, load_jsonl, write_jsonl
from kvseq.errors import FormatError


def test_load_single_sequence(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"id":"a","objects":[{"k1":"x"}]}\n')
    seqs = load_jsonl(p)
    assert len(seqs) == 1
    assert len(seqs[0]) == 1
    assert seqs[0].key_universe() == ["k1"]
    assert seqs[0].objects[0].pairs == {"k1": "x"}
    assert seqs[0].label is None


def test_values_coerced_to_strings(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"id":"a","label":3,"objects":[{"n":7,"f":1.5,"b":true,"s":"x"}]}\n')
    seq = load_jsonl(p)[0]
    assert seq.objects[0].pairs == {"n": "7", "f": "1.5", "b": "true", "s": "x"}
    assert seq.label == 3


def test_key_universe_first_seen_order(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"id":"a","objects":[{"b":"1","a":"2"},{"c":"3","a":"4"}]}\n')
    assert load_jsonl(p)[0].key_universe() == ["b", "a", "c"]


@pytest.mark.parametrize("line,frag", [
    ('{"id":"a","objects":[]}', "non-empty"),
    ('{"id":"a"}', "non-empty"),
    ('{"objects":[{"k":"v"}]}', "id"),
    ('{"id":"a","objects":[{"k":[1,2]}]}', "unsupported type"),
    ('{"id":"a","objects":[{"k":null}]}', "unsupported type"),
    ('{"id":"a","objects":["notadict"]}', "not a JSON object"),
    ('[1,2]', "expected a JSON object"),
    ('{broken', "invalid JSON"),
    ('{"id":"a","label":[],"objects":[{"k":"v"}]}', "label"),
])
def test_malformed_lines_report_line_numbers(tmp_path, line, frag):
    p = tmp_path / "d.jsonl"
    p.write_text('{"id":"ok","objects":[{"k":"v"}]}\n' + line + "\n")
    with pytest.raises(FormatError) as err:
        load_jsonl(p)
    assert ":2:" in str(err.value)
    assert frag in str(err.value)


def test_blank_lines_skipped(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('\n{"id":"a","objects":[{"k":"v"}]}\n\n')
    assert len(load_jsonl(p)) == 1


def test_roundtrip_random_sequences(tmp_path):
    rng = np.random.default_rng(0)
    seqs = []
    for i in range(100):
        n_steps = int(rng.integers(1, 6))
        objects = []
        for t in range(n_steps):
            pairs = {f"k{j}": f"v{int(rng.integers(0, 50))}"
                     for j in range(int(rng.integers(1, 5)))}
            objects.append(StructuredObject(pairs))
        label = int(rng.integers(0, 4)) if rng.random() < 0.5 else None
        seqs.append(ObjectSequence(id=f"s{i}", objects=objects, label=label))
    p = tmp_path / "d.jsonl"
    write_jsonl(p, seqs)
    assert load_jsonl(p) == seqs
