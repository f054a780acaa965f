"""Teacher-forced training with Adam and a multistep learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .data import SequencePair, stack
from .inference import RunReport
from .layers import Dropout
from .models import ModelConfig, ModelParams, forward, make_rng

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, lr: float, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch} (lr={lr})")
        self.epoch, self.lr, self.loss = epoch, lr, loss


@dataclass
class TrainConfig:
    lr0: float = 0.023
    milestones: list[int] = field(default_factory=list)
    gamma: float = 0.1
    epochs: int = 2000
    batch_size: int = 32
    seed: int = 0
    dropout: bool = True

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing: {self.milestones}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """``lr0 * gamma ** (number of milestones <= epoch)``; no milestones means fixed."""
    passed = sum(1 for m in config.milestones if m <= epoch)
    return config.lr0 * config.gamma**passed


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if grads.keys() != state.m.keys():
        raise ValueError("gradient names do not match optimizer state")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        if g.shape != m.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} vs state {m.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if lr != 0.0:
            params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def decoder_inputs(src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
    """Last source sample followed by all but the last target sample."""
    return np.concatenate([src[-1:], tgt[:-1]], axis=0)


def loss_and_grads(
    params: ModelParams, cfg: ModelConfig, src: np.ndarray, tgt: np.ndarray, drop: Optional[Dropout] = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Teacher-forced MSE and its exact gradient w.r.t. every parameter."""
    tape = ag.Tape()
    watched = {k: tape.watch(v) for k, v in params.items()}
    pred = forward(watched, cfg, src, decoder_inputs(src, tgt), drop=drop or Dropout(0.0))
    loss = ag.mse_loss(pred, tgt)
    tape.backward(loss)
    return float(loss.data), {k: tape.grad(t) for k, t in watched.items()}


def train(
    cfg: ModelConfig,
    params: ModelParams,
    dataset: Sequence[SequencePair],
    config: TrainConfig,
    report: Optional[RunReport] = None,
    log_every: int = 0,
) -> tuple[ModelParams, RunReport]:
    """Run ``config.epochs`` epochs of shuffled mini-batch Adam; returns a trained copy."""
    if not dataset:
        raise ValueError("empty training set")
    params = {k: v.copy() for k, v in params.items()}
    report = report or RunReport()
    src_all, tgt_all = stack(list(dataset))
    n = src_all.shape[1]
    rng = make_rng(config.seed)
    drop = Dropout(cfg.dropout_p, train=config.dropout, rng=rng)
    state = AdamState.zeros_like(params)

    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(params, cfg, src_all[:, idx], tgt_all[:, idx], drop)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, lr, loss)
            adam_step(params, grads, state, lr)
            total += loss * len(idx)
        report.loss_curve.append((epoch, total / n))
        if log_every and (epoch % log_every == 0 or epoch == config.epochs - 1):
            logger.info("epoch %d lr %.3g loss %.6f", epoch, lr, total / n)
    return params, report
