"""Baseline models: pair pooling, step aggregation, order sensitivity."""

import numpy as np
import numpy.testing as npt
import pytest

from kvseq.baselines import (
    FlattenedClassifier, RecordClassifier, audit_parameter_names, build_baseline,
    evaluate_record, load_any_model, predict_flattened, predict_record, save_model,
    train_flattened, train_record,
)
from kvseq.data.encoding import LabelMap, encode_flattened, encode_record
from kvseq.data.objects import ObjectSequence, StructuredObject
from kvseq.data.vocab import vocab_from_sequences
from kvseq.encoder import ModelConfig, TvmKaModel
from kvseq.errors import ConfigError, ShapeError
from kvseq.rng import phase_rng
from kvseq.tensor import Adam, ParameterStore, Tensor


def tiny_config(**kw):
    base = dict(vocab_size=32, n_classes=2, d_model=16, n_heads=2, n_layers=1,
                d_ff=32, max_positions=64, shared_heads=1, drophead_rate=0.0,
                dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def toy_sequences(n=20, n_steps=3, seed=0):
    """Label 1 iff key 'a' ever takes the value 'x'."""
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(n):
        positive = i % 2 == 0
        hit = int(rng.integers(0, n_steps)) if positive else -1
        objects = []
        for t in range(n_steps):
            a_val = "x" if t == hit else "y"
            objects.append(StructuredObject({"a": a_val, "b": f"w{rng.integers(0, 4)}"}))
        seqs.append(ObjectSequence(id=f"t{i}", objects=objects, label=int(positive)))
    return seqs


def record_fixture(n=8, n_steps=3, seed=0, dtype="float64"):
    seqs = toy_sequences(n, n_steps, seed)
    vocab = vocab_from_sequences(seqs)
    data = encode_record(seqs, vocab, LabelMap.from_sequences(seqs))
    cfg = tiny_config(vocab_size=len(vocab), dtype=dtype)
    return seqs, vocab, data, cfg


# ---------------------------------------------------------------------------
# pair embedding


def test_pair_embed_is_masked_token_mean():
    _, _, data, cfg = record_fixture()
    model = RecordClassifier(cfg, "sum", seed=1)
    out = model.pair_embed(data.pair_ids, data.pair_counts).data
    table = model.token_emb.tensor.data
    b, t, k, p = data.pair_ids.shape
    for i in (0, b - 1):
        for s in (0, t - 1):
            for j in range(k):
                ids = data.pair_ids[i, s, j]
                real = ids[ids != 0]
                npt.assert_allclose(out[i, s, j], table[real].mean(axis=0), atol=1e-12)


# ---------------------------------------------------------------------------
# aggregation order properties


def permuted_pairs(data):
    perm = np.roll(np.arange(data.pair_ids.shape[2]), 1)  # rotation, never identity
    return data.pair_ids[:, :, perm], data.pair_counts[:, :, perm]


def test_sum_aggregation_ignores_pair_order():
    _, _, data, cfg = record_fixture()
    model = RecordClassifier(cfg, "sum", seed=2)
    base = model.forward(data.pair_ids, data.pair_counts, data.step_mask).data
    ids_p, counts_p = permuted_pairs(data)
    swapped = model.forward(ids_p, counts_p, data.step_mask).data
    npt.assert_allclose(swapped, base, atol=1e-12)


def test_selfattn_aggregation_ignores_pair_order():
    _, _, data, cfg = record_fixture()
    model = RecordClassifier(cfg, "selfattn", seed=3)
    base = model.forward(data.pair_ids, data.pair_counts, data.step_mask).data
    ids_p, counts_p = permuted_pairs(data)
    swapped = model.forward(ids_p, counts_p, data.step_mask).data
    npt.assert_allclose(swapped, base, atol=1e-12)


def test_concat_aggregation_depends_on_pair_order():
    _, _, data, cfg = record_fixture()
    model = RecordClassifier(cfg, "concat", seed=4, n_keys=data.n_keys)
    base = model.forward(data.pair_ids, data.pair_counts, data.step_mask).data
    ids_p, counts_p = permuted_pairs(data)
    swapped = model.forward(ids_p, counts_p, data.step_mask).data
    assert not np.allclose(swapped, base, atol=1e-9)


def test_step_order_changes_record_output():
    _, _, data, cfg = record_fixture()
    model = RecordClassifier(cfg, "sum", seed=5)
    base = model.forward(data.pair_ids, data.pair_counts, data.step_mask).data
    rev = model.forward(data.pair_ids[:, ::-1], data.pair_counts[:, ::-1],
                        data.step_mask[:, ::-1]).data
    assert not np.allclose(rev, base, atol=1e-9)


def test_concat_rejects_wrong_key_count():
    _, _, data, cfg = record_fixture()
    model = RecordClassifier(cfg, "concat", seed=6, n_keys=data.n_keys + 1)
    with pytest.raises(ShapeError):
        model.forward(data.pair_ids, data.pair_counts, data.step_mask)


def test_record_constructor_validation():
    cfg = tiny_config()
    with pytest.raises(ConfigError):
        RecordClassifier(cfg, "mean")
    with pytest.raises(ConfigError):
        RecordClassifier(cfg, "concat")          # concat needs n_keys


# ---------------------------------------------------------------------------
# padding consistency


def test_padded_batch_matches_single_sequence():
    seqs = toy_sequences(4, n_steps=3, seed=1) + toy_sequences(2, n_steps=5, seed=2)
    for i, s in enumerate(seqs):
        s.id = f"m{i}"
    vocab = vocab_from_sequences(seqs)
    data = encode_record(seqs, vocab, LabelMap.from_sequences(seqs))
    cfg = tiny_config(vocab_size=len(vocab))
    model = RecordClassifier(cfg, "sum", seed=7)
    batch = model.forward(data.pair_ids, data.pair_counts, data.step_mask).data
    solo_data = encode_record(seqs[:1], vocab, LabelMap.from_sequences(seqs))
    solo = model.forward(solo_data.pair_ids, solo_data.pair_counts,
                         solo_data.step_mask).data
    npt.assert_allclose(batch[0], solo[0], atol=1e-12)


# ---------------------------------------------------------------------------
# flattened model


def test_flattened_forward_shape_and_padding():
    seqs = toy_sequences(6)
    vocab = vocab_from_sequences(seqs)
    data = encode_flattened(seqs, vocab, max_tokens=64, label_map=LabelMap.from_sequences(seqs))
    model = FlattenedClassifier(tiny_config(vocab_size=len(vocab)), seed=8)
    scores = predict_flattened(model, data)
    assert scores.shape == (6, 2)
    single = model.forward(data.ids[:1, : int(data.lengths[0])]).data
    npt.assert_allclose(scores[0], single[0], atol=1e-12)


def test_flattened_learns_visible_marker():
    seqs = toy_sequences(40, n_steps=2, seed=3)
    vocab = vocab_from_sequences(seqs)
    data = encode_flattened(seqs, vocab, max_tokens=64, label_map=LabelMap.from_sequences(seqs))
    model = FlattenedClassifier(tiny_config(vocab_size=len(vocab), dtype="float32"), seed=9)
    opt = Adam(model.parameters(), lr=3e-3)
    train_flattened(model, data, steps=150, optimizer=opt, rng=phase_rng(0, "flat"))
    scores = predict_flattened(model, data)
    assert (np.argmax(scores, axis=1) == data.labels).mean() >= 0.95


def test_record_learns_anywhere_marker():
    seqs = toy_sequences(40, n_steps=3, seed=4)
    vocab = vocab_from_sequences(seqs)
    data = encode_record(seqs, vocab, LabelMap.from_sequences(seqs))
    model = RecordClassifier(tiny_config(vocab_size=len(vocab), dtype="float32"), "sum", seed=10)
    opt = Adam(model.parameters(), lr=3e-3)
    train_record(model, data, steps=200, optimizer=opt, rng=phase_rng(0, "rec"))
    report = evaluate_record(model, data)
    assert report.accuracy >= 0.95


# ---------------------------------------------------------------------------
# naming audit and persistence


def test_parameter_names_follow_scheme_in_all_models():
    cfg = tiny_config()
    for model in (TvmKaModel(cfg, seed=0),
                  FlattenedClassifier(cfg, seed=0),
                  RecordClassifier(cfg, "sum", seed=0),
                  RecordClassifier(cfg, "concat", seed=0, n_keys=2),
                  RecordClassifier(cfg, "selfattn", seed=0)):
        names = audit_parameter_names(model.store)
        assert names == sorted(names)
        assert len(names) == len(set(names))


def test_audit_rejects_stray_names():
    store = ParameterStore()
    store.register("rogue weight", Tensor(np.zeros(2)))
    with pytest.raises(ConfigError):
        audit_parameter_names(store)


def test_build_baseline_dispatch_and_errors():
    cfg = tiny_config()
    assert isinstance(build_baseline("tvm_ka", cfg), TvmKaModel)
    assert isinstance(build_baseline("flattened", cfg), FlattenedClassifier)
    assert build_baseline("record_selfattn", cfg).aggregator == "selfattn"
    with pytest.raises(ConfigError):
        build_baseline("lstm", cfg)


@pytest.mark.parametrize("kind", ["flattened", "record_sum", "record_concat", "record_selfattn"])
def test_save_load_roundtrip_preserves_outputs(tmp_path, kind):
    _, _, data, cfg = record_fixture()
    model = build_baseline(kind, cfg, seed=11, n_keys=data.n_keys)
    path = str(tmp_path / "model.ckpt")
    save_model(path, model)
    loaded = load_any_model(path)
    assert type(loaded) is type(model)
    if kind == "flattened":
        ids = np.array([[1, 9, 10, 2]])
        npt.assert_array_equal(loaded.forward(ids).data, model.forward(ids).data)
    else:
        a = model.forward(data.pair_ids, data.pair_counts, data.step_mask).data
        b = loaded.forward(data.pair_ids, data.pair_counts, data.step_mask).data
        npt.assert_array_equal(a, b)


def test_save_load_roundtrip_tvm_ka(tmp_path):
    cfg = tiny_config()
    model = build_baseline("tvm_ka", cfg, seed=12)
    path = str(tmp_path / "model.ckpt")
    save_model(path, model)
    loaded = load_any_model(path)
    ids = np.array([[1, 9, 10, 2]])
    npt.assert_array_equal(loaded.tvm_encode(ids).data, model.tvm_encode(ids).data)
