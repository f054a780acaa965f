import json
import math

import numpy as np
import pytest

from tstransformer import layers
from tstransformer.autograd import DimensionError, Tensor
from tstransformer.inference import forecast_batch
from tstransformer.models import (
    CheckpointIntegrityError,
    CheckpointSchemaError,
    ModelConfig,
    as_constants,
    count_params,
    init_params,
    load_checkpoint,
    mits_forward,
    param_shapes,
    pots_forward,
    predict,
    save_checkpoint,
)

GRID = [
    ModelConfig(d_model=d, dim_feedforward=f, nhead=h, d_input=i)
    for d, f, h, i in [(8, 8, 2, 1), (16, 8, 4, 1), (32, 8, 2, 1), (4, 5, 1, 3), (2, 3, 1, 1)]
] + [
    ModelConfig(kind="pots", d_model=d, dim_feedforward=8, pos_expansion_dim=e, d_input=i)
    for d, e, i in [(8, 8, 1), (8, 64, 1), (8, 128, 1), (4, 10, 2)]
]


@pytest.mark.parametrize(
    "cfg, expected",
    [
        (ModelConfig(d_model=8), 1289),
        (ModelConfig(d_model=16), 4097),
        (ModelConfig(d_model=32), 14321),
        (ModelConfig(d_model=128), 204689),
        (ModelConfig(kind="pots", d_model=8, pos_expansion_dim=8), 1433),
        (ModelConfig(kind="pots", d_model=8, pos_expansion_dim=64), 2385),
        (ModelConfig(kind="pots", d_model=8, pos_expansion_dim=128), 3473),
    ],
)
def test_published_counts(cfg, expected):
    assert count_params(cfg) == expected


@pytest.mark.parametrize("cfg", GRID)
def test_count_equals_registered_elements(cfg):
    params = init_params(cfg, 0)
    assert set(params) == set(param_shapes(cfg))
    assert sum(p.size for p in params.values()) == count_params(cfg)


def test_count_independent_of_nhead():
    counts = {count_params(ModelConfig(d_model=8, nhead=h)) for h in (1, 2, 4, 8)}
    assert counts == {1289}


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=8, nhead=3)
    with pytest.raises(ValueError):
        ModelConfig(kind="pots")
    with pytest.raises(ValueError):
        ModelConfig(kind="lstm")


def test_init_conventions():
    cfg = ModelConfig(kind="pots", d_model=8, pos_expansion_dim=64)
    p = init_params(cfg, 5)
    for name, v in p.items():
        if ".norm" in name:
            assert np.all(v == (1.0 if name.endswith("weight") else 0.0))
        elif v.ndim == 1:
            assert np.all(v == 0.0)
        else:
            bound = math.sqrt(6.0 / sum(v.shape))
            assert np.all(np.abs(v) <= bound)


def test_init_deterministic():
    a, b = init_params(ModelConfig(), 7), init_params(ModelConfig(), 7)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = init_params(ModelConfig(), 8)
    assert not np.array_equal(a["embedding.weight"], c["embedding.weight"])


def test_xavier_statistics():
    cfg = ModelConfig(d_model=128)
    w = init_params(cfg, 3)["encoder.layer0.self_attn.out_proj.weight"]
    bound = math.sqrt(6.0 / 256)
    sigma = bound / math.sqrt(3.0)
    assert w.shape == (128, 128)
    assert np.abs(w).max() <= bound
    assert abs(w.mean()) < 3 * sigma / math.sqrt(w.size)
    assert w.std() == pytest.approx(sigma, rel=0.02)


def test_forward_shape(rng):
    cfg = ModelConfig()
    out = predict(init_params(cfg, 0), cfg, rng.uniform(-1, 1, (19, 4, 1)), rng.uniform(-1, 1, (12, 4, 1)))
    assert out.shape == (12, 4, 1)
    pcfg = ModelConfig(kind="pots", pos_expansion_dim=64)
    out = predict(init_params(pcfg, 0), pcfg, rng.uniform(-1, 1, (19, 3, 1)), rng.uniform(-1, 1, (12, 3, 1)))
    assert out.shape == (12, 3, 1)


def test_forward_rejects_wrong_input_dim(rng):
    cfg = ModelConfig()
    with pytest.raises(DimensionError):
        predict(init_params(cfg, 0), cfg, np.zeros((19, 2, 2)), np.zeros((12, 2, 2)))
    with pytest.raises(DimensionError):
        predict(init_params(cfg, 0), cfg, np.zeros((19, 2)), np.zeros((12, 2)))


def test_zero_params_give_zero_output(rng):
    cfg = ModelConfig()
    zeros = {k: np.zeros(s) for k, s in param_shapes(cfg).items()}
    out = predict(zeros, cfg, rng.normal(size=(19, 2, 1)), rng.normal(size=(12, 2, 1)))
    assert np.all(out == 0.0)


def test_kind_specific_entry_points(rng):
    mcfg, pcfg = ModelConfig(), ModelConfig(kind="pots", pos_expansion_dim=16)
    src, tgt = rng.normal(size=(19, 1, 1)), rng.normal(size=(12, 1, 1))
    mits_forward(as_constants(init_params(mcfg, 0)), mcfg, src, tgt)
    pots_forward(as_constants(init_params(pcfg, 0)), pcfg, src, tgt)
    with pytest.raises(ValueError):
        pots_forward(as_constants(init_params(mcfg, 0)), mcfg, src, tgt)


def reference_forward(raw, cfg, src, tgt):
    """Straight-line numpy version of the same equations, eval mode."""

    def lin(x, name):
        return x @ raw[f"{name}.weight"].T + raw[f"{name}.bias"]

    def ln(x, name):
        mu = x.mean(-1, keepdims=True)
        var = ((x - mu) ** 2).mean(-1, keepdims=True)
        return (x - mu) / np.sqrt(var + 1e-5) * raw[f"{name}.weight"] + raw[f"{name}.bias"]

    def mha(q_in, kv_in, name, mask=None):
        d, h = cfg.d_model, cfg.nhead
        W, b = raw[f"{name}.in_proj_weight"], raw[f"{name}.in_proj_bias"]
        q = q_in @ W[:d].T + b[:d]
        k = kv_in @ W[d : 2 * d].T + b[d : 2 * d]
        v = kv_in @ W[2 * d :].T + b[2 * d :]
        dh = d // h
        out = np.zeros_like(q)
        for bi in range(q.shape[1]):
            for hi in range(h):
                sl = slice(hi * dh, (hi + 1) * dh)
                s = q[:, bi, sl] @ k[:, bi, sl].T / math.sqrt(dh)
                if mask is not None:
                    s = s + mask
                e = np.exp(s - s.max(-1, keepdims=True))
                out[:, bi, sl] = (e / e.sum(-1, keepdims=True)) @ v[:, bi, sl]
        return lin(out, f"{name}.out_proj")

    def ffn(x, pre):
        return lin(np.maximum(lin(x, f"{pre}.linear1"), 0.0), f"{pre}.linear2")

    def embed(x):
        h = lin(x, "embedding") * math.sqrt(cfg.d_model)
        n = h.shape[0]
        if cfg.kind == "pots":
            e = cfg.pos_expansion_dim
            h = lin(h, "pos_expansion")
            pe = np.array([[math.sin(p / 10000 ** (2 * (i // 2) / e)) if i % 2 == 0
                            else math.cos(p / 10000 ** (2 * (i // 2) / e)) for i in range(e)] for p in range(n)])
            return lin(h + pe[:, None, :], "pos_invexpansion")
        d = cfg.d_model
        pe = np.array([[math.sin(p / 10000 ** (2 * (i // 2) / d)) if i % 2 == 0
                        else math.cos(p / 10000 ** (2 * (i // 2) / d)) for i in range(d)] for p in range(n)])
        return h + pe[:, None, :]

    x = embed(src)
    x = ln(x + mha(x, x, "encoder.layer0.self_attn"), "encoder.layer0.norm1")
    x = ln(x + ffn(x, "encoder.layer0"), "encoder.layer0.norm2")
    mem = ln(x, "encoder.norm")
    y = embed(tgt)
    T = y.shape[0]
    mask = np.where(np.tri(T, dtype=bool), 0.0, -np.inf)
    y = ln(y + mha(y, y, "decoder.layer0.self_attn", mask), "decoder.layer0.norm1")
    y = ln(y + mha(y, mem, "decoder.layer0.cross_attn"), "decoder.layer0.norm2")
    y = ln(y + ffn(y, "decoder.layer0"), "decoder.layer0.norm3")
    return lin(ln(y, "decoder.norm"), "unembedding")


@pytest.mark.parametrize(
    "cfg", [ModelConfig(d_model=8, nhead=2), ModelConfig(kind="pots", d_model=4, nhead=2, pos_expansion_dim=12)]
)
def test_forward_matches_straight_line_reference(cfg, rng):
    raw = init_params(cfg, 11)
    for k in raw:
        raw[k] = raw[k] + rng.normal(scale=0.05, size=raw[k].shape)
    src, tgt = rng.uniform(-1, 1, (19, 3, 1)), rng.uniform(-1, 1, (12, 3, 1))
    np.testing.assert_allclose(predict(raw, cfg, src, tgt), reference_forward(raw, cfg, src, tgt), rtol=1e-10, atol=1e-12)


def identity_wrapped(mits_params, d):
    p = dict(mits_params)
    p["pos_expansion.weight"] = np.eye(d)
    p["pos_expansion.bias"] = np.zeros(d)
    p["pos_invexpansion.weight"] = np.eye(d)
    p["pos_invexpansion.bias"] = np.zeros(d)
    return p


def test_pots_identity_reduction(rng):
    mcfg = ModelConfig(d_model=8)
    pcfg = ModelConfig(kind="pots", d_model=8, pos_expansion_dim=8)
    mp = init_params(mcfg, 2)
    pp = identity_wrapped(mp, 8)
    src, tgt = rng.uniform(-1, 1, (19, 5, 1)), rng.uniform(-1, 1, (12, 5, 1))
    assert np.array_equal(predict(mp, mcfg, src, tgt), predict(pp, pcfg, src, tgt))


def test_output_finite_on_unit_inputs(rng):
    for cfg in GRID:
        p = init_params(cfg, 0)
        out = predict(p, cfg, rng.uniform(-1, 1, (19, 2, cfg.d_input)), rng.uniform(-1, 1, (12, 2, cfg.d_input)))
        assert np.all(np.isfinite(out))


def test_padding_mask_hides_source_positions(rng):
    from tstransformer.models import forward

    cfg = ModelConfig()
    P = as_constants(init_params(cfg, 0))
    src = rng.uniform(-1, 1, (19, 2, 1))
    tgt = rng.uniform(-1, 1, (12, 2, 1))
    pad = np.zeros((2, 19), dtype=bool)
    pad[:, 15:] = True
    a = forward(P, cfg, src, tgt, src_key_padding_mask=pad).data
    src2 = src.copy()
    src2[15:] = 5.0
    b = forward(P, cfg, src2, tgt, src_key_padding_mask=pad).data
    assert np.array_equal(a, b)


# checkpoints ----------------------------------------------------------------------


@pytest.mark.parametrize("cfg", [ModelConfig(), ModelConfig(kind="pots", pos_expansion_dim=64)])
def test_checkpoint_round_trip(tmp_path, rng, cfg):
    params = init_params(cfg, 3)
    path = tmp_path / "ck.json"
    save_checkpoint(params, cfg, path)
    loaded, lcfg = load_checkpoint(path)
    assert lcfg == cfg
    assert all(np.array_equal(params[k], loaded[k]) for k in params)
    src = rng.uniform(-1, 1, (19, 4, 1))
    assert np.array_equal(forecast_batch(params, cfg, src), forecast_batch(loaded, lcfg, src))
    doc = json.loads(path.read_text())
    assert doc["total_elements"] == count_params(cfg)
    assert sum(len(e["data"]) for e in doc["params"]) == count_params(cfg)


def test_truncated_checkpoint(tmp_path):
    cfg = ModelConfig()
    path = tmp_path / "ck.json"
    save_checkpoint(init_params(cfg, 0), cfg, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)


def test_corrupt_parameter_length_names_field(tmp_path):
    cfg = ModelConfig()
    path = tmp_path / "ck.json"
    save_checkpoint(init_params(cfg, 0), cfg, path)
    doc = json.loads(path.read_text())
    doc["params"][0]["data"].pop()
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointIntegrityError, match="embedding.weight"):
        load_checkpoint(path)


def test_schema_mismatch(tmp_path):
    cfg = ModelConfig()
    path = tmp_path / "ck.json"
    save_checkpoint(init_params(cfg, 0), cfg, path)
    doc = json.loads(path.read_text())
    doc["config"]["kind"] = "pots"
    doc["config"]["pos_expansion_dim"] = 8
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointSchemaError, match="pos_expansion"):
        load_checkpoint(path)


def test_layers_shape_helpers_match_model():
    cfg = ModelConfig(d_model=8)
    core = layers.core_shapes(8, 8)
    assert set(core) <= set(param_shapes(cfg))
