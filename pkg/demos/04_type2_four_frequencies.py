#!/usr/bin/env python3
# %% [markdown]
# # Four fixed frequencies
#
# w in {0, 1, 2, 3}. The decoder has to infer from the 19 source samples
# which of the four waves it is continuing.

# %%
import sys

from tstransformer import DatasetSpec, ModelConfig, TrainConfig, build_dataset, evaluate, init_params, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 400
train_set, test_set = build_dataset(DatasetSpec(kind="type2", w_list=[0, 1, 2, 3], n_train=100, n_test=8))
cfg = ModelConfig(d_model=8, dim_feedforward=8)
params, report = train(cfg, init_params(cfg, seed=2), train_set, TrainConfig(epochs=epochs, seed=2))
print("final training loss", round(report.final_loss, 5))

scored = evaluate(params, cfg, test_set)
for r in scored.per_sequence[:4]:
    print(f"w={r.freq:.0f}  SSE={r.sse:.4f}")
print("mean SSE", round(scored.test_err, 4))
