import math

import numpy as np
import pytest

from tstransformer import autograd as ag
from tstransformer import layers
from tstransformer.autograd import DimensionError, Tensor
from tstransformer.layers import PositionalEncoder, causal_mask, positional_table


def attention_params(d, rng, zero_bias=False):
    p = {
        "a.in_proj_weight": rng.normal(size=(3 * d, d)),
        "a.in_proj_bias": np.zeros(3 * d) if zero_bias else rng.normal(size=3 * d),
        "a.out_proj.weight": rng.normal(size=(d, d)),
        "a.out_proj.bias": rng.normal(size=d),
    }
    return {k: Tensor(v) for k, v in p.items()}, p


def test_causal_mask():
    assert causal_mask(1).tolist() == [[0.0]]
    inf = -np.inf
    assert causal_mask(3).tolist() == [[0, inf, inf], [0, 0, inf], [0, 0, 0]]
    with pytest.raises(ValueError):
        causal_mask(0)


def test_single_key_attention_returns_out_proj_of_value(rng):
    d = 4
    P, raw = attention_params(d, rng)
    x = rng.normal(size=(1, 1, d))
    out = layers.multi_head_attention(Tensor(x), Tensor(x), P, "a", nhead=1).data
    v = x[0, 0] @ raw["a.in_proj_weight"][2 * d :].T + raw["a.in_proj_bias"][2 * d :]
    want = v @ raw["a.out_proj.weight"].T + raw["a.out_proj.bias"]
    np.testing.assert_allclose(out[0, 0], want, rtol=1e-13)


def test_uniform_scores_average_values(rng):
    d = 2
    P, raw = attention_params(d, rng, zero_bias=True)
    # zero query projection makes every score 0
    w = raw["a.in_proj_weight"].copy()
    w[:d] = 0.0
    P["a.in_proj_weight"] = Tensor(w)
    q = rng.normal(size=(1, 1, d))
    kv = rng.normal(size=(5, 1, d))
    out = layers.multi_head_attention(Tensor(q), Tensor(kv), P, "a", nhead=1).data
    v = kv[:, 0] @ w[2 * d :].T
    want = v.mean(axis=0) @ raw["a.out_proj.weight"].T + raw["a.out_proj.bias"]
    np.testing.assert_allclose(out[0, 0], want, rtol=1e-12)


def test_masked_attention_matches_brute_force(rng):
    n, dk = 4, 3
    q, k, v = (rng.normal(size=(n, dk)) for _ in range(3))
    out = layers.scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), causal_mask(n)).data
    for i in range(n):
        scores = [sum(q[i, c] * k[j, c] for c in range(dk)) / math.sqrt(dk) for j in range(i + 1)]
        e = [math.exp(s - max(scores)) for s in scores]
        for c in range(dk):
            want = sum(e[j] * v[j, c] for j in range(i + 1)) / sum(e)
            assert out[i, c] == pytest.approx(want, rel=1e-12)
    np.testing.assert_allclose(out[0], v[0], rtol=1e-15)


def test_attention_mask_shape_error(rng):
    P, _ = attention_params(4, rng)
    x = Tensor(rng.normal(size=(3, 1, 4)))
    with pytest.raises(DimensionError):
        layers.multi_head_attention(x, x, P, "a", nhead=2, attn_mask=causal_mask(2))


def test_key_padding_mask_excludes_keys(rng):
    P, _ = attention_params(4, rng)
    q = Tensor(rng.normal(size=(2, 1, 4)))
    kv = rng.normal(size=(3, 1, 4))
    pad = np.array([[False, False, True]])
    a = layers.multi_head_attention(q, Tensor(kv), P, "a", 2, key_padding_mask=pad).data
    kv2 = kv.copy()
    kv2[2] = 100.0
    b = layers.multi_head_attention(q, Tensor(kv2), P, "a", 2, key_padding_mask=pad).data
    assert np.array_equal(a, b)


def test_positional_table_closed_form():
    for d in (8, 64, 128, 7):
        t = positional_table(d, 31)
        for pos in range(31):
            for i in range(d):
                base = math.sin if i % 2 == 0 else math.cos
                want = base(pos / 10000 ** ((i - i % 2) / d))
                assert abs(t[pos, i] - want) < 1e-12


def test_positional_table_examples():
    t = positional_table(16)
    assert t[0].tolist() == [0.0, 1.0] * 8
    assert t[1, 0] == pytest.approx(0.841471, abs=1e-6)
    assert positional_table(3)[1, 0] == pytest.approx(math.sin(1.0), abs=1e-15)


def test_positional_encode_of_zero_is_table():
    pe = PositionalEncoder(8, max_len=50)
    out = layers.positional_encode(Tensor(np.zeros((10, 3, 8))), pe).data
    for b in range(3):
        assert np.array_equal(out[:, b], pe.table[:10])


def test_positional_encode_errors():
    pe = PositionalEncoder(4, max_len=5)
    with pytest.raises(ValueError, match="exceeds"):
        layers.positional_encode(Tensor(np.zeros((6, 1, 4))), pe)
    with pytest.raises(DimensionError):
        layers.positional_encode(Tensor(np.zeros((3, 1, 5))), pe)


def random_core(d, ff, rng):
    return {
        k: Tensor(rng.normal(scale=0.5, size=s)) for k, s in layers.core_shapes(d, ff).items()
    }


def test_core_batch_independence(rng):
    P = random_core(4, 6, rng)
    src = rng.normal(size=(5, 1, 4))
    tgt = rng.normal(size=(3, 1, 4))
    out = layers.core_forward(
        Tensor(np.repeat(src, 2, axis=1)), Tensor(np.repeat(tgt, 2, axis=1)), P, 2, causal_mask(3)
    ).data
    np.testing.assert_allclose(out[:, 0], out[:, 1], rtol=0, atol=1e-15)
    single = layers.core_forward(Tensor(src), Tensor(tgt), P, 2, causal_mask(3)).data
    np.testing.assert_allclose(out[:, :1], single, atol=1e-14)


def test_core_causality(rng):
    P = random_core(4, 6, rng)
    src = Tensor(rng.normal(size=(5, 2, 4)))
    tgt = rng.normal(size=(6, 2, 4))
    base = layers.core_forward(src, Tensor(tgt), P, 2, causal_mask(6)).data
    for t in range(6):
        pert = tgt.copy()
        pert[t + 1 :] += rng.normal(size=pert[t + 1 :].shape)
        out = layers.core_forward(src, Tensor(pert), P, 2, causal_mask(6)).data
        assert np.array_equal(out[: t + 1], base[: t + 1])


def test_core_d_model_mismatch(rng):
    P = random_core(4, 6, rng)
    with pytest.raises(DimensionError):
        layers.core_forward(Tensor(np.ones((3, 1, 4))), Tensor(np.ones((2, 1, 5))), P, 2)


def _ln(x, g, b):
    mu = sum(x) / len(x)
    var = sum((xi - mu) ** 2 for xi in x) / len(x)
    return [(xi - mu) / math.sqrt(var + 1e-5) * gi + bi for xi, gi, bi in zip(x, g, b)]


def _lin(x, W, b):
    return [sum(W[o][i] * x[i] for i in range(len(x))) + b[o] for o in range(len(W))]


def _attend(qs, kvs, P, pre, causal):
    d = len(qs[0])
    W, bias = P[f"{pre}.in_proj_weight"], P[f"{pre}.in_proj_bias"]
    Q = [_lin(x, W[:d], bias[:d]) for x in qs]
    K = [_lin(x, W[d : 2 * d], bias[d : 2 * d]) for x in kvs]
    V = [_lin(x, W[2 * d :], bias[2 * d :]) for x in kvs]
    out = []
    for i, q in enumerate(Q):
        keys = range(i + 1) if causal else range(len(K))
        s = [sum(a * b for a, b in zip(q, K[j])) / math.sqrt(d) for j in keys]
        e = [math.exp(v - max(s)) for v in s]
        z = sum(e)
        mix = [sum(e[n] * V[j][c] for n, j in enumerate(keys)) / z for c in range(d)]
        out.append(_lin(mix, P[f"{pre}.out_proj.weight"], P[f"{pre}.out_proj.bias"]))
    return out


def _block(xs, sub, P, norm):
    return [_ln([a + b for a, b in zip(x, s)], P[f"{norm}.weight"], P[f"{norm}.bias"]) for x, s in zip(xs, sub)]


def _ffn(xs, P, pre):
    return [
        _lin([max(0.0, h) for h in _lin(x, P[f"{pre}.linear1.weight"], P[f"{pre}.linear1.bias"])],
             P[f"{pre}.linear2.weight"], P[f"{pre}.linear2.bias"])
        for x in xs
    ]


def test_core_matches_hand_stepped_computation(rng):
    """d_model=2, nhead=1, recomputed with plain Python lists."""
    d, ff = 2, 3
    raw = {k: rng.normal(scale=0.7, size=s) for k, s in layers.core_shapes(d, ff).items()}
    P = {k: v.tolist() for k, v in raw.items()}
    src = rng.normal(size=(4, 1, d))
    tgt = rng.normal(size=(3, 1, d))
    got = layers.core_forward(
        Tensor(src), Tensor(tgt), {k: Tensor(v) for k, v in raw.items()}, 1, causal_mask(3)
    ).data[:, 0]

    e = "encoder.layer0"
    xs = [list(r) for r in src[:, 0]]
    xs = _block(xs, _attend(xs, xs, P, f"{e}.self_attn", False), P, f"{e}.norm1")
    xs = _block(xs, _ffn(xs, P, e), P, f"{e}.norm2")
    mem = [_ln(x, P["encoder.norm.weight"], P["encoder.norm.bias"]) for x in xs]
    dl = "decoder.layer0"
    ys = [list(r) for r in tgt[:, 0]]
    ys = _block(ys, _attend(ys, ys, P, f"{dl}.self_attn", True), P, f"{dl}.norm1")
    ys = _block(ys, _attend(ys, mem, P, f"{dl}.cross_attn", False), P, f"{dl}.norm2")
    ys = _block(ys, _ffn(ys, P, dl), P, f"{dl}.norm3")
    want = [_ln(y, P["decoder.norm.weight"], P["decoder.norm.bias"]) for y in ys]
    np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-12)


def test_single_target_position(rng):
    P = random_core(4, 4, rng)
    src = Tensor(rng.normal(size=(3, 1, 4)))
    out = layers.core_forward(src, Tensor(rng.normal(size=(1, 1, 4))), P, 2, causal_mask(1))
    assert out.shape == (1, 1, 4)


def test_layer_param_counts():
    for d, f in [(8, 8), (16, 8), (2, 3)]:
        enc = sum(math.prod(s) for s in layers.encoder_layer_shapes("e", d, f).values())
        dec = sum(math.prod(s) for s in layers.decoder_layer_shapes("d", d, f).values())
        assert enc == 4 * d * d + 4 * d + 2 * d * f + d + f + 4 * d
        assert dec - enc == 4 * d * d + 4 * d + 2 * d
