"""
Hierarchical partitioning and node reordering
=============================================

Nodes in the same cluster should get neighboring ids so they share TT
core slices. We shuffle an SBM graph, recover its clusters, and renumber.
"""
# %%
import numpy as np

from ttemb import build_hierarchy, generate_sbm, reorder, shuffle_nodes
from ttemb.partition import edge_cut, hierarchy_stats, leaf_density_ratio, random_balanced_cut

g = shuffle_nodes(generate_sbm(1000, 10, 0.08, 0.002, seed=0), seed=1)
h = build_hierarchy(g, [10, 10], seed=0)
for level in hierarchy_stats(g, h)["levels"]:
    print(level)

# %%
# The top level should recover the planted blocks.
top = h.assignments[0]
print("cut", edge_cut(g, top), "random baseline", random_balanced_cut(g, 10))
print("intra/inter density ratio", round(leaf_density_ratio(g, top), 1))

# %%
# After renumbering, the labels of consecutive ids mostly agree.
r = reorder(g, h)
print("label changes along ids: shuffled", int(np.sum(np.diff(g.labels) != 0)),
      "reordered", int(np.sum(np.diff(r.labels) != 0)))
