#!/usr/bin/env python3
# %% [markdown]
# # The tape and its gradient check
#
# Every op appends a record to a `Tape`; `backward` sweeps it once in
# reverse. Here a two-layer toy is differentiated, then the whole suite of
# finite-difference checks is run.

# %%
import numpy as np

from tstransformer import autograd as ag
from tstransformer import gradcheck

rng = np.random.default_rng(0)
tape = ag.Tape()
w1 = tape.watch(rng.normal(size=(4, 3)))
w2 = tape.watch(rng.normal(size=(1, 4)))
x = rng.normal(size=(3, 5))
y = rng.normal(size=(1, 5))

loss = ag.mse_loss(ag.matmul(w2, ag.relu(ag.matmul(w1, x))), y)
tape.backward(loss)
print("loss", float(loss.data), "| tape length", len(tape.nodes))
print("dL/dw2", tape.grad(w2).round(4))

# %% [markdown]
# Compare one entry with a central difference by hand.

# %%
h = 1e-5
w2p, w2m = w2.data.copy(), w2.data.copy()
w2p[0, 1] += h
w2m[0, 1] -= h
f = lambda w: float(ag.mse_loss(ag.matmul(w, ag.relu(ag.matmul(w1.data, x))), y).data)
print("analytic", tape.grad(w2)[0, 1], "numeric", (f(w2p) - f(w2m)) / (2 * h))

# %%
print(gradcheck.format_report(gradcheck.run_all(seed=0)))
