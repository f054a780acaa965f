#!/usr/bin/env python3
# %% [markdown]
# # Parameter budgets of MiTS and PoTS
#
# Growing d_model inflates every attention and feed-forward matrix
# quadratically. Positional expansion only adds two linear maps around the
# positional encoder, so its cost grows linearly in the expansion width.

# %%
from tstransformer import ModelConfig, count_params
from tstransformer.models import init_params, param_shapes

for d in (8, 16, 32, 128):
    print(f"MiTS d_model={d:<4d} {count_params(ModelConfig(d_model=d)):>8,d}")

for e in (8, 64, 128):
    cfg = ModelConfig(kind="pots", d_model=8, pos_expansion_dim=e)
    print(f"PoTS expansion={e:<4d} {count_params(cfg):>6,d}")

# %% [markdown]
# The closed form agrees with what is actually allocated.

# %%
cfg = ModelConfig(kind="pots", d_model=8, pos_expansion_dim=64)
params = init_params(cfg, seed=0)
print(sum(p.size for p in params.values()), "allocated")
for name, shape in list(param_shapes(cfg).items())[:6]:
    print(f"  {name:<45s} {shape}")
