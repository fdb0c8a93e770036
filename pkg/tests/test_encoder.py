"""Model wiring: config validation, pooling, tying, aggregation invariance."""

import numpy as np
import numpy.testing as npt
import pytest

import kvseq.tensor as T
from kvseq.checkpoint import param_bytes, save_checkpoint
from kvseq.encoder import ModelConfig, TvmKaModel, load_model
from kvseq.errors import ConfigError, LengthError


def tiny_config(**kw):
    base = dict(vocab_size=32, n_classes=3, d_model=8, n_heads=2, n_layers=2,
                d_ff=16, max_positions=16, shared_heads=1, drophead_rate=0.0,
                dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def test_config_validation_collects_all_problems():
    cfg = ModelConfig(vocab_size=4, n_classes=1, d_model=10, n_heads=3,
                      shared_heads=9, dtype="float16")
    with pytest.raises(ConfigError) as err:
        cfg.validate()
    msg = str(err.value)
    for frag in ("vocab_size", "n_classes", "divisible", "shared_heads", "dtype"):
        assert frag in msg


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"vocab_size": 32, "n_classes": 2, "bogus": 1})


def test_config_roundtrips():
    cfg = tiny_config()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_tvm_encode_shapes_and_pooling():
    model = TvmKaModel(tiny_config(), seed=1)
    ids = np.array([[1, 9, 10, 2, 11], [1, 12, 2, 0, 0]])
    hidden = model.tvm_encode(ids)
    assert hidden.shape == (2, 5, 8)
    kr = model.key_representations(hidden)
    assert kr.shape == (2, 8)
    npt.assert_array_equal(kr.data, hidden.data[:, 0])


def test_tvm_rejects_overlong_sequence():
    model = TvmKaModel(tiny_config(max_positions=4), seed=0)
    with pytest.raises(LengthError) as err:
        model.tvm_encode(np.zeros((1, 5), dtype=int))
    assert err.value.length == 5 and err.value.max_len == 4


def test_mlm_logits_use_tied_embedding():
    model = TvmKaModel(tiny_config(), seed=2)
    ids = np.array([[1, 9, 10, 2]])
    hidden = model.tvm_encode(ids)
    rows, cols = np.array([0, 0]), np.array([1, 2])
    before = model.mlm_logits(hidden, rows, cols).data.copy()
    assert before.shape == (2, 32)
    model.tvm.token_emb.tensor.data[...] *= 1.5
    hidden2 = model.tvm_encode(ids)
    after = model.mlm_logits(hidden2, rows, cols).data
    assert not np.allclose(before, after)


def test_classifier_shapes():
    model = TvmKaModel(tiny_config(), seed=3)
    kr = T.Tensor(np.random.default_rng(0).standard_normal((4, 5, 8)))
    pooled = model.ka_aggregate(kr)
    assert pooled.shape == (4, 8)
    logits = model.classify(pooled)
    assert logits.shape == (4, 3)


def test_aggregation_is_permutation_invariant():
    model = TvmKaModel(tiny_config(), seed=4)
    rng = np.random.default_rng(5)
    kr = rng.standard_normal((2, 5, 8))
    base = model.classify(model.ka_aggregate(T.Tensor(kr))).data
    for _ in range(20):
        perm = rng.permutation(5)
        out = model.classify(model.ka_aggregate(T.Tensor(kr[:, perm]))).data
        npt.assert_allclose(out, base, atol=1e-12, rtol=0)


def test_aggregation_mask_hides_padding_keys():
    model = TvmKaModel(tiny_config(), seed=6)
    rng = np.random.default_rng(7)
    kr3 = rng.standard_normal((1, 3, 8))
    pad = np.concatenate([kr3, 1e3 * np.ones((1, 2, 8))], axis=1)
    mask = np.array([[True, True, True, False, False]])
    with_pad = model.ka_aggregate(T.Tensor(pad), key_mask=mask).data
    without = model.ka_aggregate(T.Tensor(kr3)).data
    npt.assert_allclose(with_pad, without, atol=1e-12)


def test_shared_pairs_point_at_same_storage():
    model = TvmKaModel(tiny_config(shared_heads=1, n_heads=2, n_layers=2), seed=8)
    pairs = model.shared_pairs()
    assert len(pairs) == 2 * 1 * 3
    for tvm_name, ka_name in pairs:
        assert model.store[tvm_name].tensor is model.store[ka_name].tensor
    assert model.store["tvm.layer0.attn.head1.Wq"].tensor is not model.store["ka.layer0.attn.head1.Wq"].tensor
    assert model.store["tvm.layer0.attn.Wo"].tensor is not model.store["ka.layer0.attn.Wo"].tensor


def test_update_through_one_side_is_visible_from_the_other():
    model = TvmKaModel(tiny_config(), seed=9)
    name_tvm, name_ka = model.shared_pairs()[0]
    opt = T.Adam(model.tvm_parameters(), lr=0.1)
    shared = model.store[name_tvm].tensor
    shared.grad = np.ones_like(shared.data)
    before = model.store[name_ka].tensor.data.copy()
    opt.step()
    assert not np.allclose(model.store[name_ka].tensor.data, before)


def test_phase_parameter_split_covers_everything_once():
    model = TvmKaModel(tiny_config(), seed=10)
    tvm_names = {p.name for p in model.tvm_parameters()}
    ka_names = {p.name for p in model.ka_parameters()}
    all_names = {p.name for p in model.store.parameters()}
    assert tvm_names | ka_names == all_names
    assert not (tvm_names & ka_names)


def test_checkpoint_roundtrip_preserves_outputs_bitwise(tmp_path):
    model = TvmKaModel(tiny_config(), seed=11)
    ids = np.array([[1, 9, 10, 2, 11, 12]])
    kr = model.key_representations(model.tvm_encode(ids))
    out = model.classify(model.ka_aggregate(T.reshape(kr, (1, 1, 8)))).data
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model.store, model.config.to_dict())
    loaded = load_model(path)
    kr2 = loaded.key_representations(loaded.tvm_encode(ids))
    out2 = loaded.classify(loaded.ka_aggregate(T.reshape(kr2, (1, 1, 8)))).data
    npt.assert_array_equal(out, out2)
    name_tvm, name_ka = loaded.shared_pairs()[0]
    assert loaded.store[name_tvm].tensor is loaded.store[name_ka].tensor
    assert param_bytes(path, name_tvm) == param_bytes(path, name_ka)


def test_grad_check_full_composition():
    model = TvmKaModel(tiny_config(shared_heads=1), seed=12)
    ids = np.array([[1, 9, 10, 2], [1, 11, 2, 0], [1, 12, 13, 2]])
    allow = ids != 0
    targets = np.array([2])

    def f():
        hidden = model.tvm_encode(ids, allow=allow)
        kr = model.key_representations(hidden)
        stacked = T.reshape(kr, (1, 3, 8))
        pooled = model.ka_aggregate(stacked)
        return T.cross_entropy(model.classify(pooled), targets)

    worst = T.grad_check(f, model.store.parameters(), h=1e-5, max_coords_per_param=2,
                         rng=np.random.default_rng(13))
    assert worst <= 1e-4
