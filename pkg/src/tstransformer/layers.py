"""Encoder-decoder transformer blocks over ``[seq, batch, feature]`` tensors.

Parameters are looked up by name in a flat mapping so that the same code
path serves training (taped tensors) and evaluation (plain tensors). The
naming follows the stock PyTorch modules: ``in_proj_weight`` packs the
query, key and value projections as ``[3*d_model, d_model]``.

Every residual block is post-norm: ``LN(x + Dropout(Sublayer(x)))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import autograd as ag
from .autograd import DimensionError, Tensor

Params = Mapping[str, Tensor]


@dataclass
class Dropout:
    """Dropout settings threaded through a forward pass."""

    p: float = 0.1
    train: bool = False
    rng: Optional[np.random.Generator] = None

    def __call__(self, x: Tensor) -> Tensor:
        return ag.dropout(x, self.p, self.train, self.rng)


EVAL = Dropout(p=0.0, train=False)


# parameter layout -------------------------------------------------------------


def linear_shapes(prefix: str, d_in: int, d_out: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (d_out, d_in), f"{prefix}.bias": (d_out,)}


def norm_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (d,), f"{prefix}.bias": (d,)}


def attention_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    shapes = {f"{prefix}.in_proj_weight": (3 * d, d), f"{prefix}.in_proj_bias": (3 * d,)}
    shapes.update(linear_shapes(f"{prefix}.out_proj", d, d))
    return shapes


def encoder_layer_shapes(prefix: str, d: int, ff: int) -> dict[str, tuple[int, ...]]:
    shapes = attention_shapes(f"{prefix}.self_attn", d)
    shapes.update(linear_shapes(f"{prefix}.linear1", d, ff))
    shapes.update(linear_shapes(f"{prefix}.linear2", ff, d))
    shapes.update(norm_shapes(f"{prefix}.norm1", d))
    shapes.update(norm_shapes(f"{prefix}.norm2", d))
    return shapes


def decoder_layer_shapes(prefix: str, d: int, ff: int) -> dict[str, tuple[int, ...]]:
    shapes = attention_shapes(f"{prefix}.self_attn", d)
    shapes.update(attention_shapes(f"{prefix}.cross_attn", d))
    shapes.update(linear_shapes(f"{prefix}.linear1", d, ff))
    shapes.update(linear_shapes(f"{prefix}.linear2", ff, d))
    for i in (1, 2, 3):
        shapes.update(norm_shapes(f"{prefix}.norm{i}", d))
    return shapes


def core_shapes(d: int, ff: int) -> dict[str, tuple[int, ...]]:
    """One encoder layer and one decoder layer, each followed by a final norm."""
    shapes = encoder_layer_shapes("encoder.layer0", d, ff)
    shapes.update(norm_shapes("encoder.norm", d))
    shapes.update(decoder_layer_shapes("decoder.layer0", d, ff))
    shapes.update(norm_shapes("decoder.norm", d))
    return shapes


# building blocks ----------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"linear: input {x.shape} does not end in {d_in}")
    lead = x.shape[:-1]
    y = ag.matmul(ag.reshape(x, (-1, d_in)), ag.transpose(weight, (1, 0)))
    return ag.reshape(ag.add(y, bias), lead + (d_out,))


def causal_mask(n: int) -> np.ndarray:
    """Additive ``[n, n]`` mask: 0 on and below the diagonal, -inf above."""
    if n < 1:
        raise ValueError("causal mask size must be >= 1")
    return np.triu(np.full((n, n), -np.inf), k=1)


def padding_to_additive(key_padding_mask: np.ndarray) -> np.ndarray:
    """Boolean ``[batch, src]`` (True = ignore) to an additive ``[batch, 1, 1, src]`` mask."""
    kpm = np.asarray(key_padding_mask, dtype=bool)
    return np.where(kpm, -np.inf, 0.0)[:, None, None, :]


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None, drop: Dropout = EVAL) -> Tensor:
    """``softmax(q k^T / sqrt(d_k) + mask) v`` over ``[..., len, d_k]`` operands."""
    d_k = q.shape[-1]
    scores = ag.mul_scalar(ag.matmul(q, ag.transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(d_k))
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        try:
            np.broadcast_shapes(mask.shape, scores.shape)
        except ValueError:
            raise DimensionError(
                f"attention mask {mask.shape} does not fit scores {scores.shape}"
            ) from None
        scores = ag.add(scores, mask)
    weights = drop(ag.softmax_lastdim(scores))
    return ag.matmul(weights, v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head_attention(
    query: Tensor,
    key_value: Tensor,
    params: Params,
    prefix: str,
    nhead: int,
    attn_mask=None,
    key_padding_mask=None,
    drop: Dropout = EVAL,
) -> Tensor:
    """Multi-head attention of ``query [T, B, d]`` over ``key_value [S, B, d]``."""
    w = params[f"{prefix}.in_proj_weight"]
    b = params[f"{prefix}.in_proj_bias"]
    d = w.shape[1]
    if query.shape[-1] != d or key_value.shape[-1] != d:
        raise DimensionError(
            f"{prefix}: expected d_model {d}, got {query.shape} and {key_value.shape}"
        )
    if d % nhead:
        raise DimensionError(f"{prefix}: d_model {d} not divisible by nhead {nhead}")
    q = linear(query, w[:d], b[:d])
    k = linear(key_value, w[d : 2 * d], b[d : 2 * d])
    v = linear(key_value, w[2 * d :], b[2 * d :])

    t_len, batch = query.shape[:2]
    s_len = key_value.shape[0]
    dh = d // nhead

    def heads(x: Tensor, n: int) -> Tensor:
        # [n, B, d] -> [B, H, n, dh]
        return ag.transpose(ag.reshape(x, (n, batch, nhead, dh)), (1, 2, 0, 3))

    mask = None
    if attn_mask is not None:
        mask = np.asarray(attn_mask, dtype=np.float64)
        if mask.shape != (t_len, s_len):
            raise DimensionError(f"{prefix}: attn_mask {mask.shape} vs ({t_len}, {s_len})")
    if key_padding_mask is not None:
        kpm = padding_to_additive(key_padding_mask)
        if kpm.shape != (batch, 1, 1, s_len):
            raise DimensionError(f"{prefix}: key_padding_mask must be ({batch}, {s_len})")
        mask = kpm if mask is None else mask + kpm

    out = scaled_dot_attention(heads(q, t_len), heads(k, s_len), heads(v, s_len), mask, drop)
    out = ag.reshape(ag.transpose(out, (2, 0, 1, 3)), (t_len, batch, d))
    return linear(out, params[f"{prefix}.out_proj.weight"], params[f"{prefix}.out_proj.bias"])


def norm(x: Tensor, params: Params, prefix: str, eps: float = 1e-5) -> Tensor:
    return ag.layer_norm(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], eps)


def feed_forward(x: Tensor, params: Params, prefix: str, drop: Dropout) -> Tensor:
    h = ag.relu(linear(x, params[f"{prefix}.linear1.weight"], params[f"{prefix}.linear1.bias"]))
    return linear(drop(h), params[f"{prefix}.linear2.weight"], params[f"{prefix}.linear2.bias"])


def encoder_layer_forward(
    x: Tensor,
    params: Params,
    prefix: str,
    nhead: int,
    key_padding_mask=None,
    drop: Dropout = EVAL,
    eps: float = 1e-5,
) -> Tensor:
    sa = multi_head_attention(
        x, x, params, f"{prefix}.self_attn", nhead, key_padding_mask=key_padding_mask, drop=drop
    )
    x = norm(ag.add(x, drop(sa)), params, f"{prefix}.norm1", eps)
    x = norm(ag.add(x, drop(feed_forward(x, params, prefix, drop))), params, f"{prefix}.norm2", eps)
    return x


def decoder_layer_forward(
    x: Tensor,
    memory: Tensor,
    params: Params,
    prefix: str,
    nhead: int,
    tgt_mask=None,
    tgt_key_padding_mask=None,
    memory_key_padding_mask=None,
    drop: Dropout = EVAL,
    eps: float = 1e-5,
) -> Tensor:
    sa = multi_head_attention(
        x, x, params, f"{prefix}.self_attn", nhead, tgt_mask, tgt_key_padding_mask, drop
    )
    x = norm(ag.add(x, drop(sa)), params, f"{prefix}.norm1", eps)
    ca = multi_head_attention(
        x, memory, params, f"{prefix}.cross_attn", nhead,
        key_padding_mask=memory_key_padding_mask, drop=drop,
    )
    x = norm(ag.add(x, drop(ca)), params, f"{prefix}.norm2", eps)
    x = norm(ag.add(x, drop(feed_forward(x, params, prefix, drop))), params, f"{prefix}.norm3", eps)
    return x


def core_forward(
    src: Tensor,
    tgt: Tensor,
    params: Params,
    nhead: int,
    tgt_mask=None,
    src_key_padding_mask=None,
    tgt_key_padding_mask=None,
    memory_key_padding_mask=None,
    drop: Dropout = EVAL,
    eps: float = 1e-5,
) -> Tensor:
    """Encode ``src``, decode ``tgt`` against the memory; returns ``[T, B, d_model]``."""
    if src.ndim != 3 or tgt.ndim != 3:
        raise DimensionError(f"core expects [seq, batch, d_model], got {src.shape}, {tgt.shape}")
    if src.shape[1:] != tgt.shape[1:]:
        raise DimensionError(f"source {src.shape} and target {tgt.shape} disagree on batch/d_model")
    memory = encoder_layer_forward(src, params, "encoder.layer0", nhead, src_key_padding_mask, drop, eps)
    memory = norm(memory, params, "encoder.norm", eps)
    out = decoder_layer_forward(
        tgt, memory, params, "decoder.layer0", nhead,
        tgt_mask, tgt_key_padding_mask, memory_key_padding_mask, drop, eps,
    )
    return norm(out, params, "decoder.norm", eps)


# positional encoding ------------------------------------------------------------


def positional_table(d_enc: int, max_len: int = 5000) -> np.ndarray:
    """Sinusoidal table ``[max_len, d_enc]``: sin on even columns, cos on odd."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_enc, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d_enc)
    table = np.zeros((max_len, d_enc))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_enc // 2])
    return table


@dataclass
class PositionalEncoder:
    d_enc: int
    max_len: int = 5000
    p: float = 0.1
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.table = positional_table(self.d_enc, self.max_len)


def positional_encode(x: Tensor, pe: PositionalEncoder, drop: Dropout = EVAL) -> Tensor:
    """Add ``PE[0:seq]`` broadcast over the batch axis, then dropout."""
    seq = x.shape[0]
    if seq > pe.max_len:
        raise ValueError(f"sequence length {seq} exceeds positional table length {pe.max_len}")
    if x.shape[-1] != pe.d_enc:
        raise DimensionError(f"positional encoding width {pe.d_enc} vs input {x.shape}")
    return drop(ag.add(x, pe.table[:seq, None, :]))
