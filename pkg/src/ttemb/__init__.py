"""Tensor-train compressed trainable embeddings for graph neural networks."""
from .tt_format import (
    TTConfig,
    TTEmbedding,
    compression_ratio,
    coordinate_to_index,
    count_params,
    index_to_coordinate,
    load_cores,
    lookup_batch,
    materialize,
    plan_factorization,
    reconstruct_row,
    save_cores,
)
from .initializer import (
    InfeasibleRanks,
    InitSpec,
    init_decomp_ortho,
    init_gaussian,
    init_ortho_core,
    initialize,
    ttm_decompose,
    verify_claim1,
)
from .autodiff import CoreGradients, OptimizerState, apply_update, backward_lookup
from .graph import CsrGraph, from_edges, generate_sbm, load_edge_list, relabel, shuffle_nodes
from .partition import PartitionHierarchy, build_hierarchy, edge_cut, partition, permute_level, reorder

__version__ = "0.1.0"

__all__ = [
    "TTConfig",
    "TTEmbedding",
    "compression_ratio",
    "coordinate_to_index",
    "count_params",
    "index_to_coordinate",
    "load_cores",
    "lookup_batch",
    "materialize",
    "plan_factorization",
    "reconstruct_row",
    "save_cores",
    "InfeasibleRanks",
    "InitSpec",
    "init_decomp_ortho",
    "init_gaussian",
    "init_ortho_core",
    "initialize",
    "ttm_decompose",
    "verify_claim1",
    "CoreGradients",
    "OptimizerState",
    "apply_update",
    "backward_lookup",
    "CsrGraph",
    "from_edges",
    "generate_sbm",
    "load_edge_list",
    "relabel",
    "shuffle_nodes",
    "PartitionHierarchy",
    "build_hierarchy",
    "edge_cut",
    "partition",
    "permute_level",
    "reorder",
]
