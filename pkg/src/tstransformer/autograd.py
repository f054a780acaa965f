"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` is an append-only list of operation records. Every op that
sees at least one taped input appends a node whose inputs are earlier nodes,
so the tape is topologically ordered by construction and ``backward`` is a
single reverse sweep.

Backward rules live in the module-level ``RULES`` table, keyed by op kind.
A rule receives the upstream gradient plus whatever the forward pass saved
and returns one gradient per input (``None`` for inputs that need none).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "Tape",
    "Tensor",
    "RULES",
    "add",
    "sub",
    "mul",
    "mul_scalar",
    "matmul",
    "relu",
    "dropout",
    "softmax_lastdim",
    "layer_norm",
    "concat_seq",
    "slice_seq",
    "getitem",
    "reshape",
    "transpose",
    "sum_all",
    "mse_loss",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


@dataclass
class Node:
    op: str
    inputs: tuple[Optional[int], ...]
    saved: tuple
    shape: tuple[int, ...]
    grad: Optional[np.ndarray] = None


@dataclass
class Tape:
    """Records operations for one forward/backward pass."""

    nodes: list[Node] = field(default_factory=list)

    def watch(self, value) -> "Tensor":
        """Return a leaf tensor for ``value`` whose gradient will be tracked."""
        data = np.array(value, dtype=np.float64)
        self.nodes.append(Node("leaf", (), (), data.shape))
        return Tensor(data, tape=self, node_id=len(self.nodes) - 1)

    def _record(self, op, inputs, saved, out):
        self.nodes.append(Node(op, inputs, saved, out.shape))
        return Tensor(out, tape=self, node_id=len(self.nodes) - 1)

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(node) into every node reachable from ``loss``."""
        if loss.tape is not self or loss.node_id is None:
            raise ValueError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        for node in self.nodes:
            node.grad = None
        self.nodes[loss.node_id].grad = np.ones(loss.shape)
        for node in reversed(self.nodes[: loss.node_id + 1]):
            if node.grad is None or not node.inputs:
                continue
            in_grads = RULES[node.op](node.grad, *node.saved)
            for idx, g in zip(node.inputs, in_grads):
                if idx is None or g is None:
                    continue
                target = self.nodes[idx]
                if target.grad is None:
                    target.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    target.grad += g

    def grad(self, t: "Tensor") -> np.ndarray:
        """Gradient buffer of ``t`` after :meth:`backward` (zeros if unreached)."""
        if t.tape is not self or t.node_id is None:
            raise ValueError("tensor is not recorded on this tape")
        g = self.nodes[t.node_id].grad
        return np.zeros(t.shape) if g is None else g


class Tensor:
    """A float64 array, optionally linked to a node on a :class:`Tape`."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: Optional[Tape] = None, node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = "" if self.node_id is None else f", node={self.node_id}"
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: Sequence[Tensor], saved: tuple, out: np.ndarray) -> Tensor:
    tape = None
    for t in inputs:
        if t.node_id is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands belong to different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(out)
    ids = tuple(t.node_id if t.tape is tape else None for t in inputs)
    return tape._record(op, ids, saved, out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _emit("add", (a, b), (a.shape, b.shape), a.data + b.data)


def _add_rule(g, sa, sb):
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _emit("sub", (a, b), (a.shape, b.shape), a.data - b.data)


def _sub_rule(g, sa, sb):
    return _unbroadcast(g, sa), -_unbroadcast(g, sb)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _emit("mul", (a, b), (a.data, b.data), a.data * b.data)


def _mul_rule(g, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _emit("mul_scalar", (a,), (float(c),), a.data * c)


def _mul_scalar_rule(g, c):
    return (g * c,)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", (a,), (mask,), np.where(mask, a.data, 0.0))


def _relu_rule(g, mask):
    return (g * mask,)


def dropout(a: Tensor, p: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout. Identity when ``train`` is false or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit generator")
    scale = (rng.random(a.shape) >= p) / (1.0 - p)
    return _emit("mul_const", (a,), (scale,), a.data * scale)


def _mul_const_rule(g, scale):
    return (g * scale,)


# linear algebra ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's broadcasting rules over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        # einsum, unlike BLAS gemm, gives each output row bits that do not depend
        # on how many rows are in the batch; causal prefixes stay bit-identical
        out = np.einsum("...ij,...jk->...ik", a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return _emit("matmul", (a, b), (a.data, b.data), out)


def _matmul_rule(g, a, b):
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def softmax_lastdim(x) -> Tensor:
    """Softmax over the last axis; ``-inf`` entries receive zero weight."""
    x = _as_tensor(x)
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    if np.isnan(x.data).any():
        raise ValueError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax", (x,), (y,), y)


def _softmax_rule(g, y):
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (biased variance), then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last extent {n}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    return _emit("layer_norm", (x, gain, bias), (xhat, inv, gain.data), out)


def _layer_norm_rule(g, xhat, inv, gain):
    lead = tuple(range(g.ndim - 1))
    ggain = (g * xhat).sum(axis=lead)
    gbias = g.sum(axis=lead)
    gx_hat = g * gain
    gx = inv * (
        gx_hat
        - gx_hat.mean(axis=-1, keepdims=True)
        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
    )
    return gx, ggain, gbias


# shape plumbing -------------------------------------------------------------


def getitem(a: Tensor, key) -> Tensor:
    # basic slicing only: each output element maps to a distinct input element
    return _emit("getitem", (a,), (a.shape, key), a.data[key])


def _getitem_rule(g, shape, key):
    out = np.zeros(shape)
    out[key] = g
    return (out,)


def slice_seq(a: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` along the sequence (first) axis."""
    return getitem(a, (slice(start, stop),))


def concat_seq(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the sequence (first) axis."""
    tensors = [_as_tensor(t) for t in tensors]
    tail = {t.shape[1:] for t in tensors}
    if len(tail) != 1:
        raise DimensionError(f"concat_seq: trailing shapes differ: {sorted(tail)}")
    sizes = [t.shape[0] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=0)
    return _emit("concat", tuple(tensors), (np.cumsum(sizes)[:-1],), out)


def _concat_rule(g, splits):
    return tuple(np.split(g, splits, axis=0))


def reshape(a: Tensor, shape) -> Tensor:
    return _emit("reshape", (a,), (a.shape,), a.data.reshape(shape))


def _reshape_rule(g, shape):
    return (g.reshape(shape),)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    return _emit("transpose", (a,), (np.argsort(axes),), a.data.transpose(axes))


def _transpose_rule(g, inverse):
    return (g.transpose(inverse),)


# reductions ---------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    return _emit("sum", (a,), (a.shape,), np.array(a.data.sum()))


def _sum_rule(g, shape):
    return (np.broadcast_to(g, shape),)


def mse_loss(pred, target) -> Tensor:
    """Mean of squared differences over all elements."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    return _emit("mse", (pred, target), (diff,), np.array(np.mean(diff * diff)))


def _mse_rule(g, diff):
    d = (2.0 / diff.size) * g * diff
    return d, -d


RULES: dict[str, Callable[..., tuple[Any, ...]]] = {
    "add": _add_rule,
    "sub": _sub_rule,
    "mul": _mul_rule,
    "mul_scalar": _mul_scalar_rule,
    "mul_const": _mul_const_rule,
    "relu": _relu_rule,
    "matmul": _matmul_rule,
    "softmax": _softmax_rule,
    "layer_norm": _layer_norm_rule,
    "getitem": _getitem_rule,
    "concat": _concat_rule,
    "reshape": _reshape_rule,
    "transpose": _transpose_rule,
    "sum": _sum_rule,
    "mse": _mse_rule,
}
