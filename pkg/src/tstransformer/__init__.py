"""Continuous-value encoder-decoder transformers (MiTS, PoTS) for time series forecasting."""

from .data import DatasetSpec, SequencePair, build_dataset, generate_sinusoid
from .inference import RunReport, evaluate, forecast, forecast_batch
from .models import (
    ModelConfig,
    count_params,
    forward,
    init_params,
    load_checkpoint,
    mits_forward,
    pots_forward,
    save_checkpoint,
)
from .training import AdamState, TrainConfig, adam_step, lr_at, train

__version__ = "0.1.0"
