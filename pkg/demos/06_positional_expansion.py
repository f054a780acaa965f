#!/usr/bin/env python3
# %% [markdown]
# # What positional expansion does
#
# With the expansion and its inverse set to identity maps, PoTS is exactly
# MiTS. With a wider expansion, position codes live in a space larger than
# the 8-dimensional model. In 8 dimensions the 31 codes span at most 8
# directions, so most positions are linear mixtures of others. In 64
# dimensions they span many more (the slowest columns barely change over 31
# steps, so not all 31).

# %%
import numpy as np

from tstransformer.layers import positional_table
from tstransformer.models import ModelConfig, init_params, predict

mcfg = ModelConfig(d_model=8)
pcfg = ModelConfig(kind="pots", d_model=8, pos_expansion_dim=8)
params = init_params(mcfg, 0)
wrapped = dict(params, **{
    "pos_expansion.weight": np.eye(8), "pos_expansion.bias": np.zeros(8),
    "pos_invexpansion.weight": np.eye(8), "pos_invexpansion.bias": np.zeros(8),
})
rng = np.random.default_rng(0)
src, tgt = rng.uniform(-1, 1, (19, 4, 1)), rng.uniform(-1, 1, (12, 4, 1))
print("identity-wrapped PoTS == MiTS:", np.array_equal(predict(params, mcfg, src, tgt), predict(wrapped, pcfg, src, tgt)))

# %%
for d in (8, 64):
    pe = positional_table(d, 31)
    print(f"d_enc={d:3d}  rank of the 31 position codes: {np.linalg.matrix_rank(pe)}")
