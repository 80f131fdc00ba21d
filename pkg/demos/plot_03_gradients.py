"""
Training TT cores directly
==========================

Fit a TT table to a target matrix with hand-written gradients and SGD.
"""
# %%
import numpy as np

from ttemb import OptimizerState, TTConfig, TTEmbedding, apply_update, backward_lookup, lookup_batch

rng = np.random.default_rng(0)
cfg = TTConfig(32, 8, (2, 4, 4), (2, 2, 2), (1, 4, 4, 1))
target = TTEmbedding(cfg, [rng.standard_normal(s) for s in cfg.core_shapes])
want = lookup_batch(target, np.arange(32))

emb = TTEmbedding(cfg, [0.5 * rng.standard_normal(s) for s in cfg.core_shapes])
opt = OptimizerState("sgd", learning_rate=2e-3)
idx = np.arange(32)

# %%
# Each step: look up rows, push the residual back into the cores, update.
for step in range(201):
    resid = lookup_batch(emb, idx) - want
    if step % 50 == 0:
        print(f"step {step:3d}  loss {0.5 * np.sum(resid ** 2):.4f}")
    apply_update(emb, backward_lookup(emb, idx, resid), opt)
