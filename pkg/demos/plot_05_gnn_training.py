"""
GraphSage with a trainable TT embedding
=======================================

Node classification on an SBM graph without node features, comparing a
reordered graph with a shuffled one. Fewer epochs than the benchmark keep
this quick.
"""
# %%
from ttemb.gnn import TrainConfig, train
from ttemb.experiments import GraphSpec, prepare_graph

spec = GraphSpec(num_nodes=1000, num_blocks=10, p_in=0.08, p_out=0.002)
cfg = TrainConfig(rank=4, epochs=100, learning_rate=1e-2)

for branching in ("auto", None):
    g, _ = prepare_graph(spec, seed=0, branching=branching, cfg=cfg)
    state = train(g, cfg)
    best = state.best()
    print(f"{str(branching):>5}: test acc {best['test_acc']:.3f} at epoch {best['epoch']}, "
          f"{state.backend.num_params} embedding parameters")
