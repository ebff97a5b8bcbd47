import numpy as np
import pytest

from sedkit import numerics as nx
from sedkit.errors import ConfigError, ParseError, ShapeError
from sedkit.frontend import AugmentPolicy
from sedkit.network import (
    Checkpoint,
    ConformerBiLSTM,
    ModelConfig,
    bilstm_layer,
    conformer_block,
    conv_subsample,
    count_parameters,
    encode,
    forward,
    init_parameters,
    load_checkpoint,
    multi_head_attention,
    parameter_shapes,
    pool_and_classify,
    save_checkpoint,
    subsampled_length,
)

NO_AUG = AugmentPolicy(enabled=False)


def tiny(**kw):
    base = dict(num_blocks=2, d_model=64, attention_heads=2, lstm_hidden=32, proj_dim=32, conv_kernel=15)
    base.update(kw)
    return ModelConfig(**base)


def feats(T=98, B=None, seed=0):
    shape = (T, 80) if B is None else (B, T, 80)
    return np.random.default_rng(seed).normal(size=shape).astype(np.float32)


# -- config -----------------------------------------------------------------------

@pytest.mark.parametrize(
    "kw",
    [dict(d_model=30, attention_heads=4), dict(conv_kernel=4), dict(task_subset=()), dict(task_subset=("p", "x")),
     dict(pooling="max"), dict(head_mode="softmax"), dict(dropout_p=1.0)],
)
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_config_dict_roundtrip():
    cfg = tiny(task_subset=("p", "wr", "i"), augment=NO_AUG)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# -- subsampling -------------------------------------------------------------------

@pytest.mark.parametrize("T, expected", [(98, 23), (7, 1), (12, 2), (298, 73)])
def test_subsample_lengths(T, expected):
    assert subsampled_length(T) == expected
    cfg = tiny()
    params = init_parameters(cfg)
    out = conv_subsample(nx.Array(feats(T, B=1)), params, cfg)
    assert out.shape == (1, expected, cfg.d_model)


def test_subsample_too_short():
    cfg = tiny()
    with pytest.raises(ShapeError, match="7"):
        conv_subsample(nx.Array(feats(6, B=1)), init_parameters(cfg), cfg)


# -- attention ---------------------------------------------------------------------

def _mha_params(d, seed=0):
    rng = np.random.default_rng(seed)
    p = {}
    for proj in "qkvo":
        p[f"w{proj}"] = nx.Array(rng.normal(size=(d, d)) / np.sqrt(d), dtype=np.float64)
        p[f"b{proj}"] = nx.Array(rng.normal(size=d), dtype=np.float64)
    return p


def test_attention_single_frame():
    p = _mha_params(8)
    x = nx.Array(np.random.default_rng(1).normal(size=(1, 1, 8)), dtype=np.float64)
    out, w = multi_head_attention(x, p, "", heads=2, return_weights=True)
    np.testing.assert_array_equal(w.data, np.ones((1, 2, 1, 1)))
    value = x.data @ p["wv"].data + p["bv"].data
    np.testing.assert_allclose(out.data, value @ p["wo"].data + p["bo"].data, atol=1e-12)


def test_attention_identical_frames_identical_rows():
    p = _mha_params(8)
    x = nx.Array(np.tile(np.random.default_rng(2).normal(size=8), (1, 5, 1)), dtype=np.float64)
    out = multi_head_attention(x, p, "", heads=2).data
    np.testing.assert_allclose(out[0], np.broadcast_to(out[0, 0], (5, 8)), atol=1e-12)


def test_attention_rows_sum_to_one():
    p = _mha_params(8)
    x = nx.Array(np.random.default_rng(3).normal(size=(1, 4, 8)), dtype=np.float64)
    _, w = multi_head_attention(x, p, "", heads=2, return_weights=True)
    assert w.shape == (1, 2, 4, 4)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_indivisible():
    with pytest.raises(ConfigError):
        multi_head_attention(nx.Array(np.zeros((1, 2, 6))), _mha_params(6), "", heads=4)


# -- conformer block -----------------------------------------------------------------

def test_zero_projection_block_is_layer_norm():
    cfg = tiny(num_blocks=1, d_model=16, attention_heads=2)
    params = init_parameters(cfg, dtype=np.float64)
    for name, p in params.items():
        if name.startswith("blocks.0.") and not name.endswith((".gamma", ".beta")):
            p.data[...] = 0.0
    x = nx.Array(np.random.default_rng(0).normal(size=(2, 9, 16)), dtype=np.float64)
    out = conformer_block(x, params, 0, cfg).data
    mu = x.data.mean(-1, keepdims=True)
    ref = (x.data - mu) / np.sqrt(x.data.var(-1, keepdims=True) + 1e-5)
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_block_preserves_shape():
    cfg = tiny(num_blocks=1)
    x = nx.Array(np.random.default_rng(0).normal(size=(3, 11, 64)))
    assert conformer_block(x, init_parameters(cfg), 0, cfg).shape == (3, 11, 64)


def test_block_gradient_wrt_input():
    cfg = tiny(num_blocks=1, d_model=8, attention_heads=2, conv_kernel=3, dropout_p=0.0)
    params = init_parameters(cfg, seed=1, dtype=np.float64)
    x = nx.Array(np.random.default_rng(4).uniform(-2, 2, size=(1, 6, 8)), requires_grad=True, dtype=np.float64)
    w = np.random.default_rng(5).normal(size=(1, 6, 8))
    inputs = [x] + [p for n, p in params.items() if n.startswith("blocks.0.")]
    errs = nx.check_gradients(lambda: (conformer_block(x, params, 0, cfg) * w).sum(), inputs, max_entries=8)
    assert max(errs.values()) < 1e-3, errs


# -- LSTM ---------------------------------------------------------------------------

def _lstm_params(d_in, h, bidirectional=True, seed=0):
    rng = np.random.default_rng(seed)
    out = {}
    for direction in ("fw", "bw") if bidirectional else ("fw",):
        out[f"l.{direction}.w_ih"] = nx.Array(rng.uniform(-0.5, 0.5, (d_in, 4 * h)), requires_grad=True, dtype=np.float64)
        out[f"l.{direction}.w_hh"] = nx.Array(rng.uniform(-0.5, 0.5, (h, 4 * h)), requires_grad=True, dtype=np.float64)
        out[f"l.{direction}.bias"] = nx.Array(rng.uniform(-0.5, 0.5, 4 * h), requires_grad=True, dtype=np.float64)
    return out


def test_lstm_single_frame():
    p = _lstm_params(2, 3)
    x = nx.Array(np.ones((1, 1, 2)), dtype=np.float64)
    out = bilstm_layer(x, p, "l.")
    assert out.shape == (1, 1, 6)


def test_lstm_parameter_count_formula():
    cfg = ModelConfig(num_blocks=0, d_model=2, attention_heads=1, lstm_layers=1, lstm_hidden=3)
    assert count_parameters(cfg, "lstm.0.fw.") == 4 * 3 * (2 + 3 + 1) == 72
    assert count_parameters(cfg, "lstm.0.bw.") == 72


def test_lstm_matches_reference_loop():
    p = _lstm_params(3, 4, bidirectional=False, seed=2)
    x = np.random.default_rng(5).normal(size=(2, 6, 3))
    out = bilstm_layer(nx.Array(x, dtype=np.float64), p, "l.", bidirectional=False).data

    def sig(z):
        return 1 / (1 + np.exp(-z))

    W, U, b = p["l.fw.w_ih"].data, p["l.fw.w_hh"].data, p["l.fw.bias"].data
    h = c = np.zeros((2, 4))
    for t in range(6):
        z = x[:, t] @ W + h @ U + b
        i, f, o, g = sig(z[:, :4]), sig(z[:, 4:8]), sig(z[:, 8:12]), np.tanh(z[:, 12:])
        c = f * c + i * g
        h = o * np.tanh(c)
        np.testing.assert_allclose(out[:, t], h, atol=1e-12)


def test_lstm_future_perturbation():
    x = np.random.default_rng(6).normal(size=(1, 10, 2))
    bumped = x.copy()
    bumped[0, 5] += 1.0
    for bidirectional in (True, False):
        p = _lstm_params(2, 3, bidirectional)
        a = bilstm_layer(nx.Array(x, dtype=np.float64), p, "l.", bidirectional).data
        b = bilstm_layer(nx.Array(bumped, dtype=np.float64), p, "l.", bidirectional).data
        changed = not np.allclose(a[0, 2], b[0, 2])
        assert changed is bidirectional
        assert not np.allclose(a[0, 5], b[0, 5])


def test_lstm_shape_error_names_gates():
    p = _lstm_params(2, 3)
    with pytest.raises(ShapeError, match="forget"):
        bilstm_layer(nx.Array(np.ones((1, 4, 5))), p, "l.")


def test_lstm_gradients():
    p = _lstm_params(3, 2, seed=3)
    x = nx.Array(np.random.default_rng(7).uniform(-2, 2, (2, 5, 3)), requires_grad=True, dtype=np.float64)
    weights = np.random.default_rng(8).normal(size=(2, 5, 4))
    inputs = [x] + list(p.values())
    errs = nx.check_gradients(lambda: (bilstm_layer(x, p, "l.") * weights).sum(), inputs)
    assert max(errs.values()) < 1e-3, errs


# -- heads / forward --------------------------------------------------------------------

def test_mean_pooling_constant_sequence():
    cfg = tiny(proj_dim=4)
    params = init_parameters(cfg, dtype=np.float64)
    frame = np.random.default_rng(0).normal(size=4)
    const = pool_and_classify(nx.Array(np.tile(frame, (1, 7, 1))), params, cfg).data
    single = pool_and_classify(nx.Array(frame[None, None, :]), params, cfg).data
    np.testing.assert_allclose(const, single, atol=1e-12)


def test_affine_head():
    cfg = tiny(proj_dim=4, task_subset=("b",))
    params = init_parameters(cfg, dtype=np.float64)
    params["head.b.weight"].data[...] = 0.0
    params["head.b.bias"].data[...] = [0.2, 0.9]
    out = pool_and_classify(nx.Array(np.random.default_rng(0).normal(size=(1, 3, 4))), params, cfg).data
    np.testing.assert_allclose(out[0, 0], [0.2, 0.9])


def test_five_task_logits_shape():
    cfg = tiny(augment=NO_AUG)
    assert forward(cfg, init_parameters(cfg), feats()).shape == (5, 2)
    assert ConformerBiLSTM(cfg).forward(feats(B=3)).shape == (3, 5, 2)


@pytest.mark.parametrize(
    "subset, width", [(("p", "b", "r", "wr", "i"), 2), (("p", "wr", "i"), 2), (("b",), 1)]
)
def test_head_count_matches_subset(subset, width):
    cfg = tiny(task_subset=subset, head_mode="two_logit" if width == 2 else "one_logit")
    assert ConformerBiLSTM(cfg).forward(feats()).shape == (len(subset), width)


def test_eval_is_deterministic():
    m = ConformerBiLSTM(tiny())
    a = m.forward(feats(), training=False).data
    b = m.forward(feats(), training=False).data
    assert a.tobytes() == b.tobytes()


def test_training_mode_is_stochastic():
    m = ConformerBiLSTM(tiny())
    assert not np.array_equal(m.forward(feats(), training=True).data, m.forward(feats(), training=True).data)


def test_degenerate_config():
    cfg = tiny(num_blocks=0, lstm_layers=0)
    assert ConformerBiLSTM(cfg).forward(feats()).shape == (5, 2)


def test_pooling_invariant_to_frame_permutation_without_mixing_layers():
    cfg = tiny(num_blocks=0, lstm_layers=0)
    params = init_parameters(cfg, dtype=np.float64)
    h = np.random.default_rng(9).normal(size=(1, 13, cfg.d_model))
    perm = np.random.default_rng(10).permutation(13)

    def head(frames):
        z = nx.linear(nx.Array(frames), params["proj.weight"], params["proj.bias"])
        return pool_and_classify(z, params, cfg).data

    np.testing.assert_allclose(head(h), head(h[:, perm]), atol=1e-12)


def test_bilstm_model_sees_future_frames_unidirectional_does_not():
    x = feats(60, B=1)
    bumped = x.copy()
    bumped[0, 40:] += 3.0
    for bidirectional in (True, False):
        cfg = tiny(num_blocks=0, lstm_layers=2, lstm_bidirectional=bidirectional)
        params = init_parameters(cfg, seed=1)
        a = encode(nx.Array(x), params, cfg, upto="lstm").data
        b = encode(nx.Array(bumped), params, cfg, upto="lstm").data
        # subsampled frame 2 only covers input frames < 16
        assert (not np.array_equal(a[0, 2], b[0, 2])) is bidirectional


def test_full_model_gradient_check():
    cfg = ModelConfig(num_blocks=1, d_model=16, attention_heads=2, lstm_hidden=8, proj_dim=8, conv_kernel=3,
                      dropout_p=0.0, augment=NO_AUG)
    model = ConformerBiLSTM(cfg, seed=3, dtype=np.float64)
    x = feats(12, B=2, seed=4).astype(np.float64)
    w = np.random.default_rng(5).normal(size=(2, 5, 2))
    params = list(model.params.values())
    errs = nx.check_gradients(lambda: (model.forward(x) * w).sum(), params, max_entries=4)
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-3, (list(model.params)[worst], errs[worst])


# -- parameters & checkpoints -------------------------------------------------------

def test_head_parameter_count():
    cfg = ModelConfig(proj_dim=128)
    assert count_parameters(cfg, "head.") == 5 * (128 * 2 + 2) == 1290


def test_parameter_count_linear_in_blocks():
    counts = [count_parameters(tiny(num_blocks=n)) for n in (0, 1, 2, 4)]
    per_block = counts[1] - counts[0]
    assert counts[2] - counts[0] == 2 * per_block
    assert counts[3] - counts[2] == 2 * per_block
    assert sum(int(np.prod(s)) for s in parameter_shapes(tiny()).values()) == count_parameters(tiny())


def test_checkpoint_roundtrip_bitwise(tmp_path):
    m = ConformerBiLSTM(tiny(), seed=5)
    m.fit_normalizer([feats(seed=1), feats(seed=2)])
    adam = nx.AdamState(lr=1e-3, t=3, m={"proj.bias": np.ones(32, np.float32)}, v={"proj.bias": np.ones(32, np.float32)})
    save_checkpoint(Checkpoint.from_model(m, adam=adam, epoch=4, best_metric=0.5), tmp_path / "m.sedk")
    ck = load_checkpoint(tmp_path / "m.sedk")
    assert ck.epoch == 4 and ck.best_metric == 0.5 and ck.adam.t == 3
    assert ck.config == m.config
    m2 = ck.build_model()
    x = feats(seed=3)
    assert m.forward(x).data.tobytes() == m2.forward(x).data.tobytes()


def test_checkpoint_truncated_and_corrupt(tmp_path):
    path = tmp_path / "m.sedk"
    save_checkpoint(Checkpoint.from_model(ConformerBiLSTM(tiny(num_blocks=0))), path)
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(ParseError):
        load_checkpoint(path)
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ParseError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(data[:4] + (99).to_bytes(4, "little") + data[8:])
    with pytest.raises(ParseError, match="version"):
        load_checkpoint(path)


def test_checkpoint_into_smaller_config(tmp_path):
    big = ConformerBiLSTM(tiny(num_blocks=12, d_model=16, lstm_hidden=4, proj_dim=4))
    save_checkpoint(Checkpoint.from_model(big), tmp_path / "big.sedk")
    small = ConformerBiLSTM(tiny(num_blocks=3, d_model=16, lstm_hidden=4, proj_dim=4))
    with pytest.raises(ShapeError):
        small.load_state(load_checkpoint(tmp_path / "big.sedk").params)
