"""MiTS and PoTS continuous-value transformers.

Both models swap the token embedding of a stock encoder-decoder transformer
for a linear map ``d_input -> d_model`` and un-embed with the transpose-shaped
map back to ``d_input``. PoTS additionally lifts each stream to
``pos_expansion_dim`` before adding positional encodings and projects it back
to ``d_model`` afterwards, so the core stays small.

Parameters are a flat ``dict[str, np.ndarray]`` keyed by canonical names::

    embedding.{weight,bias}            unembedding.{weight,bias}
    pos_expansion.{weight,bias}        pos_invexpansion.{weight,bias}   (PoTS)
    encoder.layer0.self_attn.{in_proj_weight,in_proj_bias}
    encoder.layer0.self_attn.out_proj.{weight,bias}
    encoder.layer0.{linear1,linear2,norm1,norm2}.{weight,bias}
    encoder.norm.{weight,bias}
    decoder.layer0.{self_attn,cross_attn}.*   decoder.layer0.norm3.*
    decoder.norm.{weight,bias}
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import autograd as ag
from . import layers
from .autograd import DimensionError, Tensor
from .layers import Dropout, EVAL, PositionalEncoder

MITS = "mits"
POTS = "pots"

ModelParams = dict[str, np.ndarray]


class CheckpointError(ValueError):
    """Base class for unreadable checkpoints."""


class CheckpointIntegrityError(CheckpointError):
    """The file is damaged: truncated, unparsable, or with inconsistent sizes."""


class CheckpointSchemaError(CheckpointError):
    """The file is intact but its parameter names do not match its config."""


@dataclass(frozen=True)
class ModelConfig:
    kind: str = MITS
    d_input: int = 1
    d_model: int = 8
    nhead: int = 2
    dim_feedforward: int = 8
    dropout_p: float = 0.1
    pos_expansion_dim: Optional[int] = None
    max_len: int = 5000
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in (MITS, POTS):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if min(self.d_input, self.d_model, self.nhead, self.dim_feedforward) < 1:
            raise ValueError("dimensions must be positive")
        if self.d_model % self.nhead:
            raise ValueError(f"d_model {self.d_model} not divisible by nhead {self.nhead}")
        if self.kind == POTS and (self.pos_expansion_dim is None or self.pos_expansion_dim < 1):
            raise ValueError("PoTS needs pos_expansion_dim >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")

    @property
    def pe_dim(self) -> int:
        return self.pos_expansion_dim if self.kind == POTS else self.d_model


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names and shapes, in initialization order."""
    shapes = layers.linear_shapes("embedding", cfg.d_input, cfg.d_model)
    if cfg.kind == POTS:
        shapes.update(layers.linear_shapes("pos_expansion", cfg.d_model, cfg.pos_expansion_dim))
        shapes.update(layers.linear_shapes("pos_invexpansion", cfg.pos_expansion_dim, cfg.d_model))
    shapes.update(layers.core_shapes(cfg.d_model, cfg.dim_feedforward))
    shapes.update(layers.linear_shapes("unembedding", cfg.d_model, cfg.d_input))
    return shapes


def count_params(cfg: ModelConfig) -> int:
    """Closed-form number of learnable scalars."""
    i, d, f = cfg.d_input, cfg.d_model, cfg.dim_feedforward
    attn = 4 * d * d + 4 * d
    ffn = 2 * d * f + d + f
    encoder = attn + ffn + 2 * 2 * d
    decoder = 2 * attn + ffn + 3 * 2 * d
    total = (i * d + d) + (d * i + i) + encoder + decoder + 2 * 2 * d
    if cfg.kind == POTS:
        e = cfg.pos_expansion_dim
        total += (d * e + e) + (e * d + d)
    return total


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; every random draw in the package goes through one."""
    return np.random.Generator(np.random.Philox(seed))


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Xavier-uniform for matrices, zeros for biases, ones/zeros for layer norms."""
    rng = make_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) >= 2:
            fan_out, fan_in = shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif _is_norm_gain(name):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _is_norm_gain(name: str) -> bool:
    return name.endswith(".weight") and ".norm" in name


def forward(
    params: Mapping[str, Tensor],
    cfg: ModelConfig,
    src,
    tgt,
    tgt_mask=None,
    drop: Dropout = EVAL,
    src_key_padding_mask=None,
    tgt_key_padding_mask=None,
) -> Tensor:
    """Predict the next sample at each target position, ``[T, B, d_input]``.

    ``params`` maps names to :class:`Tensor` (taped for training, plain for
    evaluation). ``src`` is ``[S, B, d_input]`` and ``tgt`` ``[T, B, d_input]``.
    """
    src, tgt = ag._as_tensor(src), ag._as_tensor(tgt)
    for name, x in (("src", src), ("tgt", tgt)):
        if x.ndim != 3 or x.shape[-1] != cfg.d_input:
            raise DimensionError(f"{name} must be [seq, batch, {cfg.d_input}], got {x.shape}")
    if tgt_mask is None:
        tgt_mask = layers.causal_mask(tgt.shape[0])
    pe = _encoder_for(cfg)
    scale = math.sqrt(cfg.d_model)

    def embed(x: Tensor) -> Tensor:
        h = ag.mul_scalar(layers.linear(x, params["embedding.weight"], params["embedding.bias"]), scale)
        if cfg.kind == POTS:
            h = layers.linear(h, params["pos_expansion.weight"], params["pos_expansion.bias"])
            h = layers.positional_encode(h, pe, drop)
            return layers.linear(h, params["pos_invexpansion.weight"], params["pos_invexpansion.bias"])
        return layers.positional_encode(h, pe, drop)

    out = layers.core_forward(
        embed(src), embed(tgt), params, cfg.nhead, tgt_mask,
        src_key_padding_mask, tgt_key_padding_mask, src_key_padding_mask, drop, cfg.layer_norm_eps,
    )
    return layers.linear(out, params["unembedding.weight"], params["unembedding.bias"])


def mits_forward(params, cfg, src, tgt, tgt_mask=None, drop: Dropout = EVAL) -> Tensor:
    if cfg.kind != MITS:
        raise ValueError("mits_forward needs a MiTS config")
    return forward(params, cfg, src, tgt, tgt_mask, drop)


def pots_forward(params, cfg, src, tgt, tgt_mask=None, drop: Dropout = EVAL) -> Tensor:
    if cfg.kind != POTS:
        raise ValueError("pots_forward needs a PoTS config")
    return forward(params, cfg, src, tgt, tgt_mask, drop)


_PE_CACHE: dict[tuple[int, int], PositionalEncoder] = {}


def _encoder_for(cfg: ModelConfig) -> PositionalEncoder:
    key = (cfg.pe_dim, cfg.max_len)
    if key not in _PE_CACHE:
        _PE_CACHE[key] = PositionalEncoder(cfg.pe_dim, cfg.max_len, cfg.dropout_p)
    return _PE_CACHE[key]


def as_constants(params: ModelParams) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def predict(params: ModelParams, cfg: ModelConfig, src, tgt) -> np.ndarray:
    """Eval-mode forward on plain arrays."""
    return forward(as_constants(params), cfg, src, tgt).data


# checkpoints --------------------------------------------------------------------

CHECKPOINT_FORMAT = "tstransformer-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, cfg: ModelConfig, path) -> None:
    """Write a JSON document: config, then name/shape/flat row-major data per parameter."""
    entries = [
        {"name": name, "shape": list(params[name].shape), "data": params[name].ravel().tolist()}
        for name in param_shapes(cfg)
    ]
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "total_elements": sum(len(e["data"]) for e in entries),
        "params": entries,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointIntegrityError(f"{path}: not a complete JSON document ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointIntegrityError(f"{path}: field 'format' is not {CHECKPOINT_FORMAT!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointIntegrityError(f"{path}: unsupported field 'version' {doc.get('version')!r}")
    try:
        cfg = ModelConfig(**doc["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointSchemaError(f"{path}: field 'config' invalid ({exc})") from None

    params = {}
    for entry in doc.get("params", []):
        name = entry.get("name")
        shape = tuple(entry.get("shape", ()))
        data = entry.get("data", [])
        if len(data) != math.prod(shape):
            raise CheckpointIntegrityError(
                f"{path}: parameter {name!r} holds {len(data)} values, shape {shape} needs {math.prod(shape)}"
            )
        params[name] = np.array(data, dtype=np.float64).reshape(shape)

    stored = sum(v.size for v in params.values())
    if doc.get("total_elements") != stored:
        raise CheckpointIntegrityError(
            f"{path}: field 'total_elements' is {doc.get('total_elements')}, parameters hold {stored}"
        )
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointSchemaError(f"{path}: parameter names mismatch (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointSchemaError(f"{path}: parameter {name!r} has shape {params[name].shape}, expected {shape}")
    return params, cfg
