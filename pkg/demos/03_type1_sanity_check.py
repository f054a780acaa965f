#!/usr/bin/env python3
# %% [markdown]
# # Sanity check: one sinusoid, repeated
#
# A single w=1 wave over 31 samples, repeated 100 times. The first 19
# samples are the source, the last 12 the forecast target. The model should
# memorise it quickly.

# %%
import sys

import numpy as np

from tstransformer import DatasetSpec, ModelConfig, TrainConfig, build_dataset, evaluate, init_params, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 300
train_set, test_set = build_dataset(DatasetSpec(kind="type1", repeat=100))
cfg = ModelConfig(d_model=8, dim_feedforward=8)
params, report = train(cfg, init_params(cfg, seed=1), train_set, TrainConfig(epochs=epochs, seed=1))

for epoch, loss in report.loss_curve[:: max(1, epochs // 10)]:
    print(f"epoch {epoch:5d}  loss {loss:.5f}")

# %%
result = evaluate(params, cfg, test_set[:1]).per_sequence[0]
print("t   truth     forecast")
for t, (a, b) in enumerate(zip(result.truth, result.forecast), start=19):
    print(f"{t:2d}  {a:+.4f}  {b:+.4f}")
print("SSE over the 12-step horizon:", round(result.sse, 4))
