"""Autoregressive forecasting and test-set error."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import SequencePair, stack
from .models import ModelConfig, ModelParams, as_constants, forward


@dataclass
class SequenceResult:
    freq: float
    forecast: np.ndarray
    truth: np.ndarray

    @property
    def sse(self) -> float:
        return float(np.sum((self.forecast - self.truth) ** 2))


@dataclass
class RunReport:
    loss_curve: list[tuple[int, float]] = field(default_factory=list)
    test_err: float = float("nan")
    per_sequence: list[SequenceResult] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1][1] if self.loss_curve else float("nan")


def forecast_batch(params: ModelParams, cfg: ModelConfig, src: np.ndarray, horizon: int = 12) -> np.ndarray:
    """Forecast ``horizon`` steps for every column of ``src [S, B, d_input]``.

    The decoder starts from the last source sample; each step's output at the
    last position is appended to the decoder input. Returns ``[horizon, B, d_input]``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    src = np.asarray(src, dtype=np.float64)
    consts = as_constants(params)
    dec = src[-1:]
    for _ in range(horizon):
        out = forward(consts, cfg, src, dec).data
        dec = np.concatenate([dec, out[-1:]], axis=0)
    return dec[1:]


def forecast(params: ModelParams, cfg: ModelConfig, src, horizon: int = 12) -> np.ndarray:
    """Forecast a single scalar series ``src`` (length 19); returns ``horizon`` values."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 1, cfg.d_input)
    return forecast_batch(params, cfg, src, horizon)[:, 0, :].squeeze(-1)


Predictor = Callable[[np.ndarray, int], np.ndarray]


def evaluate(
    params: Optional[ModelParams],
    cfg: Optional[ModelConfig],
    test: Sequence[SequencePair],
    predictor: Optional[Predictor] = None,
) -> RunReport:
    """Per-sequence 12-step SSE; ``test_err`` is its mean over the test set.

    ``predictor(src [S, B, 1], horizon) -> [horizon, B, 1]`` overrides the model.
    """
    if not test:
        raise ValueError("empty test set")
    src, tgt = stack(list(test))
    horizon = tgt.shape[0]
    if predictor is None:
        preds = forecast_batch(params, cfg, src, horizon)
    else:
        preds = np.asarray(predictor(src, horizon), dtype=np.float64)
    results = [
        SequenceResult(p.freq, preds[:, b, 0].copy(), np.asarray(p.tgt, dtype=np.float64))
        for b, p in enumerate(test)
    ]
    return RunReport(test_err=float(np.mean([r.sse for r in results])), per_sequence=results)
