import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clqg import tensor as T
from clqg.transformer import (AttentionWeights, ModelConfig, directional_mask, encoder_head_masks,
                              multi_head_attention, padding_mask, positional_encoding)
from clqg.xmodel import CrossLingualTransformer
from tests.gradcheck import check_gradients, relative_error


def loop_mask(n, kind, permit_self=False):
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            if kind == "forward":
                ok = i < j or (permit_self and i == j)
            elif kind == "backward":
                ok = i > j or (permit_self and i == j)
            else:
                ok = i >= j
            out[i, j] = 0.0 if ok else -math.inf
    return out


@pytest.mark.parametrize("kind", ["forward", "backward", "causal"])
def test_directional_mask_matches_definition(kind):
    for n in range(1, 17):
        np.testing.assert_array_equal(directional_mask(n, kind).matrix, loop_mask(n, kind))
        if kind != "causal":
            np.testing.assert_array_equal(directional_mask(n, kind, "permit_self").matrix,
                                          loop_mask(n, kind, permit_self=True))


def test_directional_mask_small_examples():
    f = directional_mask(3, "forward").matrix
    assert f[0].tolist() == [-math.inf, 0.0, 0.0]
    assert f[2].tolist() == [-math.inf] * 3
    assert directional_mask(1, "backward").matrix.tolist() == [[-math.inf]]
    with pytest.raises(ValueError):
        directional_mask(0, "forward")
    with pytest.raises(ValueError):
        directional_mask(3, "sideways")


def test_encoder_heads_split_forward_then_backward():
    masks = encoder_head_masks(5, 4)
    for h in (0, 1):
        np.testing.assert_array_equal(masks[h], loop_mask(5, "forward"))
    for h in (2, 3):
        np.testing.assert_array_equal(masks[h], loop_mask(5, "backward"))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000), st.sampled_from(["forward", "backward", "causal"]))
def test_attention_weight_is_exactly_zero_where_masked(n, seed, kind):
    rng = np.random.default_rng(seed)
    w = AttentionWeights(8, 2, rng)
    x = rng.normal(size=(1, n, 8))
    mask = directional_mask(n, kind)
    _, attn = multi_head_attention(x, x, x, mask, w, return_weights=True)
    blocked = np.isneginf(mask.matrix)
    assert (attn[0][:, blocked] == 0.0).all()
    rows_open = ~blocked.all(axis=1)
    np.testing.assert_allclose(attn[0].sum(axis=-1)[:, rows_open], 1.0, rtol=1e-5)
    assert (attn[0].sum(axis=-1)[:, ~rows_open] == 0.0).all()


def test_positional_encoding_against_formula():
    pe = positional_encoding(512, 300)
    expected = np.empty((512, 300))
    for pos in range(512):
        for i in range(150):
            angle = pos / 10000 ** (2 * i / 300)
            expected[pos, 2 * i] = math.sin(angle)
            expected[pos, 2 * i + 1] = math.cos(angle)
    assert np.abs(pe - expected).max() < 1e-6
    assert pe[0].tolist() == [0.0, 1.0] * 150


def test_positional_encoding_rejects_odd_width():
    with pytest.raises(ValueError):
        positional_encoding(4, 7)


def test_model_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(vocab_size=10, d_model=30, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=8, n_heads=2, mask_diagonal="sometimes")
    assert ModelConfig(vocab_size=10, d_model=8, n_heads=2).ffn_dim == 32


def small_model(seed=0, **kw):
    cfg = ModelConfig(vocab_size=11, d_model=8, n_heads=2, private_layers=1, shared_layers=1,
                      ffn_dim=16, dropout=0.0, max_positions=16, **kw)
    return CrossLingualTransformer(cfg, seed=seed).eval()


def test_decoder_is_causal():
    model = small_model()
    src = np.array([[4, 7, 8, 9, 2]])
    a = np.array([[1, 6, 7, 8, 9]])
    b = np.array([[1, 6, 10, 10, 6]])
    la = model(src, "pri", "pri", a).data
    lb = model(src, "pri", "pri", b).data
    np.testing.assert_array_equal(la[:, :2], lb[:, :2])
    assert not np.allclose(la[:, 2:], lb[:, 2:])


def test_padding_does_not_change_real_positions():
    model = small_model(seed=3)
    short = np.array([[4, 7, 8, 2]])
    padded = np.array([[4, 7, 8, 2, 0, 0]])
    prefix = np.array([[1, 6, 9]])
    np.testing.assert_allclose(model.encode(short, "sec").data, model.encode(padded, "sec").data[:, :4],
                               atol=1e-6)
    np.testing.assert_allclose(model(short, "sec", "pri", prefix).data,
                               model(padded, "sec", "pri", prefix).data, atol=1e-5)


def test_padding_mask_shape():
    m = padding_mask(np.array([[5, 0], [0, 0]]), 0)
    assert m.shape == (2, 1, 1, 2)
    assert m[0, 0, 0].tolist() == [0.0, -math.inf]


def test_sequence_longer_than_position_table():
    model = small_model()
    with pytest.raises(ValueError, match="max_positions"):
        model.encode(np.ones((1, 17), dtype=int), "pri")


def test_attention_input_gradients():
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        with T.precision(np.float64):
            w = AttentionWeights(4, 2, rng)
            for p in (w.q_bias, w.k_bias, w.v_bias, w.o_bias):
                p.data = rng.normal(size=4)
        heads = encoder_head_masks(3, 2)
        err = check_gradients(
            lambda q, kv, c: T.tsum(multi_head_attention(q, kv, kv, heads, w) * c),
            [(2, 3, 4), (2, 3, 4), (2, 3, 4)], seed)
        assert err < 1e-5


def test_full_model_parameter_gradients():
    """Finite differences on sampled entries of every parameter tensor."""
    with T.precision(np.float64):
        model = small_model(seed=7)
    src = np.array([[4, 7, 8, 2], [5, 9, 2, 0]])
    tgt = np.array([[1, 6, 7, 2], [1, 10, 2, 0]])

    def loss():
        return T.cross_entropy(model(src, "sec", "pri", tgt[:, :-1]), tgt[:, 1:], 0)

    with T.precision(np.float64):
        model.zero_grad()
        loss().backward()
        rng = np.random.default_rng(0)
        h = 1e-4
        for name, p in model.named_parameters():
            if p.grad is None:
                assert name.startswith(("enc.pri", "dec.sec")), name
                continue
            flat = p.data.reshape(-1)
            picks = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            numeric = np.empty(len(picks))
            for k, idx in enumerate(picks):
                orig = flat[idx]
                flat[idx] = orig + h
                with T.no_grad():
                    up = loss().item()
                flat[idx] = orig - h
                with T.no_grad():
                    down = loss().item()
                flat[idx] = orig
                numeric[k] = (up - down) / (2 * h)
            analytic = p.grad.reshape(-1)[picks]
            assert relative_error(analytic, numeric) < 1e-5 or np.abs(analytic - numeric).max() < 1e-9, name
