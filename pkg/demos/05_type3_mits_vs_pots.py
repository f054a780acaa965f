#!/usr/bin/env python3
# %% [markdown]
# # Arbitrary frequencies: capacity vs positional expansion
#
# Frequencies are drawn uniformly from (0, 3) waves per 31 samples, so most
# test waves never occur in training. We compare MiTS at d_model 8 and 16
# with PoTS (d_model 8, positional expansion 64) over three seeds on one
# shared dataset. Full runs take a few minutes each; pass a smaller epoch
# count to skim.

# %%
import sys

import numpy as np

from tstransformer.models import count_params
from tstransformer.recipes import fit, resolve

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
names = ["type3-mits8", "type3-mits16", "type3-pots64"]
errs = {}
for name in names:
    for seed in (1, 2, 3):
        recipe = resolve(name, seed, epochs)
        _, report, _, _ = fit(recipe)
        errs.setdefault(name, []).append(report.test_err)
        print(f"{name:<14s} seed {seed}  params {count_params(recipe.model):>6d}  "
              f"loss {report.final_loss:.4f}  err {report.test_err:.3f}")

# %%
for name in names:
    print(f"{name:<14s} median err {np.median(errs[name]):.3f}")
