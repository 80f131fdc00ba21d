"""
TT-compressed embedding tables
==============================

Build a tensor-train table for a large node set, look up a few rows, and
compare its size with a dense table.
"""
# %%
# Plan a factorization. Row and column dimensions are each split into three
# factors; the interior ranks control capacity.
import numpy as np

from ttemb import InitSpec, count_params, initialize, lookup_batch, plan_factorization

cfg = plan_factorization(169_363, 128, d=3, ranks=16, row_factors=(55, 55, 56), col_factors=(8, 4, 4))
for k, shape in enumerate(cfg.core_shapes):
    print(f"core {k}: {shape}")

# %%
# Parameter count against the dense table.
dense = cfg.num_nodes * cfg.emb_dim
print(f"TT parameters {count_params(cfg):,} vs dense {dense:,} ({dense / count_params(cfg):.1f}x smaller)")

# %%
# Rows are produced on demand from the cores, never stored.
emb = initialize(cfg, InitSpec("gaussian", seed=0))
rows = lookup_batch(emb, np.array([0, 46, 169_362]))
print(rows.shape, rows[:, :4].round(4))
