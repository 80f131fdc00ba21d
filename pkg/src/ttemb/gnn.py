"""Full-batch GNN training with a trainable embedding table as node input.

Two layer types are supported:

* ``graphsage_mean``: ``h' = act(h W_self + mean_{u in N(v)} h_u W_neigh + b)``,
  with the mean over an empty neighborhood taken as zero.
* ``gcn``: ``h' = act(D^-1/2 (A + I) D^-1/2 h W + b)``.

The input ``h0`` is either a dense ``M x N`` table or a TT-compressed one.
Gradients are computed by hand and flow into the table rows or TT cores.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .autodiff import OptimizerState, backward_lookup, optimizer_step
from .graph import CsrGraph
from .initializer import InitSpec, initialize
from .tt_format import TTConfig, TTEmbedding, count_params, lookup_batch, plan_factorization

__all__ = [
    "FullEmbedding",
    "TTBackend",
    "GnnModel",
    "TrainConfig",
    "TrainState",
    "make_backend",
    "init_model",
    "aggregation_matrix",
    "forward",
    "train",
    "evaluate",
    "softmax_cross_entropy",
]


class FullEmbedding:
    """Dense trainable ``M x N`` table."""

    variant = "full"

    def __init__(self, table: np.ndarray):
        self.table = table

    @property
    def params(self) -> list[np.ndarray]:
        return [self.table]

    @property
    def num_params(self) -> int:
        return int(self.table.size)

    @property
    def emb_dim(self) -> int:
        return self.table.shape[1]

    def lookup(self, indices) -> np.ndarray:
        return self.table[np.asarray(indices, dtype=np.int64)]

    def backward(self, indices, upstream) -> list[np.ndarray]:
        g = np.zeros_like(self.table)
        np.add.at(g, np.asarray(indices, dtype=np.int64), upstream)
        return [g]


class TTBackend:
    """Adapter exposing a :class:`TTEmbedding` through the backend interface."""

    variant = "tt"

    def __init__(self, emb: TTEmbedding):
        self.emb = emb

    @property
    def params(self) -> list[np.ndarray]:
        return self.emb.cores

    @property
    def num_params(self) -> int:
        return count_params(self.emb.config)

    @property
    def emb_dim(self) -> int:
        return self.emb.config.emb_dim

    def lookup(self, indices) -> np.ndarray:
        return lookup_batch(self.emb, indices)

    def backward(self, indices, upstream) -> list[np.ndarray]:
        return backward_lookup(self.emb, indices, upstream).grads


@dataclass
class GnnModel:
    layer_type: Literal["graphsage_mean", "gcn"]
    weights: list[dict[str, np.ndarray]]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def params(self) -> list[np.ndarray]:
        return [w[k] for w in self.weights for k in sorted(w)]


@dataclass
class TrainConfig:
    backend: Literal["full", "tt"] = "tt"
    layer_type: Literal["graphsage_mean", "gcn"] = "graphsage_mean"
    num_layers: int = 2
    hidden_dim: int = 16
    emb_dim: int = 16
    d: int = 3
    rank: int = 4
    init: str = "gaussian"
    # std of the reconstructed table entries; TT inits are rescaled to match
    emb_std: float = 1.0
    epochs: int = 300
    learning_rate: float = 1e-3
    optimizer: Literal["sgd", "adam"] = "adam"
    weight_decay: float = 0.0
    early_stop_patience: int | None = None
    seed: int = 0
    dtype: str = "float64"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    config: TrainConfig
    model: GnnModel
    backend: FullEmbedding | TTBackend
    graph: CsrGraph
    model_opt: OptimizerState
    backend_opt: OptimizerState
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def best(self) -> dict:
        """History entry with the highest validation accuracy (earliest on ties)."""
        return max(self.history, key=lambda h: (h["val_acc"], -h["epoch"]))


def tt_config_for(num_nodes: int, cfg: TrainConfig) -> TTConfig:
    return plan_factorization(num_nodes, cfg.emb_dim, cfg.d, cfg.rank, ortho_friendly=True)


def _tt_init_spec(config: TTConfig, method: str, seed: int, entry_std: float, dtype: str) -> InitSpec:
    """Init spec whose reconstructed table has entries of roughly ``entry_std``."""
    method = method.replace("-", "_")
    if method == "gaussian":
        # an entry of W sums prod(R_interior) products of d iid N(0, s^2) factors
        paths = math.prod(config.ranks[1:-1])
        std = (entry_std**2 / paths) ** (1.0 / (2 * config.d))
        return InitSpec("gaussian", seed, gaussian_std=std, dtype=dtype)
    # orthonormal columns over prod(m) rows: squared column norm = rows * std^2
    return InitSpec(method, seed, target_scale=config.padded_rows * entry_std**2, dtype=dtype)


def make_backend(num_nodes: int, cfg: TrainConfig, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    if cfg.backend == "full":
        rng = np.random.default_rng(seed)
        if cfg.init.replace("-", "_") == "gaussian":
            table = rng.normal(0.0, cfg.emb_std, size=(num_nodes, cfg.emb_dim))
        else:
            from .initializer import random_orthogonal

            table = random_orthogonal(num_nodes, cfg.emb_dim, rng) * math.sqrt(num_nodes) * cfg.emb_std
        return FullEmbedding(table.astype(cfg.dtype))
    if cfg.backend == "tt":
        tcfg = tt_config_for(num_nodes, cfg)
        return TTBackend(initialize(tcfg, _tt_init_spec(tcfg, cfg.init, seed, cfg.emb_std, cfg.dtype)))
    raise ValueError(f"unknown backend {cfg.backend!r}")


def init_model(layer_type: str, dims: list[int], rng: np.random.Generator, dtype="float64") -> GnnModel:
    """Uniform fan-in init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    if layer_type not in ("graphsage_mean", "gcn"):
        raise ValueError(f"unknown layer type {layer_type!r}")
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        layer = {"W": rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype), "b": np.zeros(fan_out, dtype)}
        if layer_type == "graphsage_mean":
            layer["W_neigh"] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)
        weights.append(layer)
    return GnnModel(layer_type, weights)


def aggregation_matrix(graph: CsrGraph, layer_type: str) -> sp.csr_matrix:
    a = graph.adjacency()
    if layer_type == "graphsage_mean":
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return (sp.diags(inv) @ a).tocsr()
    if layer_type == "gcn":
        a = a + sp.identity(graph.num_nodes, format="csr")
        deg = np.asarray(a.sum(axis=1)).ravel()
        s = sp.diags(1.0 / np.sqrt(deg))
        return (s @ a @ s).tocsr()
    raise ValueError(f"unknown layer type {layer_type!r}")


def _forward_all(model: GnnModel, agg: sp.csr_matrix, h0: np.ndarray):
    """Logits for every node plus the per-layer cache used by backprop."""
    h = h0
    cache = []
    for l, w in enumerate(model.weights):
        last = l == model.num_layers - 1
        if model.layer_type == "graphsage_mean":
            ah = agg @ h
            z = h @ w["W"] + ah @ w["W_neigh"] + w["b"]
        else:
            ah = agg @ h
            z = ah @ w["W"] + w["b"]
        cache.append((h, ah, z))
        h = z if last else np.maximum(z, 0.0)
    return h, cache


def forward(model: GnnModel, backend, graph: CsrGraph, node_set=None) -> np.ndarray:
    """Logits for ``node_set`` (all nodes by default)."""
    agg = aggregation_matrix(graph, model.layer_type)
    h0 = backend.lookup(np.arange(graph.num_nodes))
    logits, _ = _forward_all(model, agg, h0)
    return logits if node_set is None else logits[np.asarray(node_set)]


def _backward_all(model: GnnModel, agg: sp.csr_matrix, cache, dlogits: np.ndarray):
    grads = [dict() for _ in model.weights]
    dz = dlogits
    agg_t = agg.T.tocsr()
    for l in range(model.num_layers - 1, -1, -1):
        h, ah, z = cache[l]
        w = model.weights[l]
        if l < model.num_layers - 1:
            dz = dz * (z > 0)
        grads[l]["b"] = dz.sum(axis=0)
        if model.layer_type == "graphsage_mean":
            grads[l]["W"] = h.T @ dz
            grads[l]["W_neigh"] = ah.T @ dz
            dh = dz @ w["W"].T + agg_t @ (dz @ w["W_neigh"].T)
        else:
            grads[l]["W"] = ah.T @ dz
            dh = agg_t @ (dz @ w["W"].T)
        dz = dh
    return grads, dz


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = labels.size
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def _metrics(logits: np.ndarray, graph: CsrGraph, mask: np.ndarray):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("empty evaluation split")
    loss, _ = softmax_cross_entropy(logits[idx], graph.labels[idx])
    acc = float(np.mean(np.argmax(logits[idx], axis=1) == graph.labels[idx]))
    return acc, loss


def evaluate(state: TrainState, split: Literal["train", "val", "test"] = "test", logits=None):
    """``(accuracy, loss)`` on a split. Weights are not touched."""
    mask = {"train": state.graph.train_mask, "val": state.graph.val_mask, "test": state.graph.test_mask}[split]
    if mask is None:
        raise ValueError(f"graph has no {split} mask")
    if logits is None:
        logits = forward(state.model, state.backend, state.graph)
    return _metrics(logits, state.graph, mask)


def _record(state: TrainState, logits: np.ndarray, train_loss: float) -> dict:
    g = state.graph
    entry = {"epoch": state.epoch, "loss": train_loss}
    for split, mask in (("train", g.train_mask), ("val", g.val_mask), ("test", g.test_mask)):
        acc, loss = _metrics(logits, g, mask)
        entry[f"{split}_acc"] = acc
        if split != "train":
            entry[f"{split}_loss"] = loss
    state.history.append(entry)
    return entry


def train(graph: CsrGraph, cfg: TrainConfig, backend=None) -> TrainState:
    """Full-batch training; epoch 0 in the history is the untrained state.

    Each epoch runs forward, softmax cross-entropy on the train mask, backprop
    through the layers into the embedding backend, then one optimizer step
    for the layers and one for the backend.
    """
    if graph.labels is None or graph.train_mask is None:
        raise ValueError("training needs labels and masks")
    rng = np.random.default_rng(cfg.seed)
    if backend is None:
        backend = make_backend(graph.num_nodes, cfg, seed=int(rng.integers(2**31)))
    else:
        rng.integers(2**31)
    dims = [backend.emb_dim] + [cfg.hidden_dim] * (cfg.num_layers - 1) + [graph.num_classes]
    model = init_model(cfg.layer_type, dims, rng, cfg.dtype)
    state = TrainState(
        cfg,
        model,
        backend,
        graph,
        OptimizerState(cfg.optimizer, cfg.learning_rate, weight_decay=cfg.weight_decay),
        OptimizerState(cfg.optimizer, cfg.learning_rate),
    )
    agg = aggregation_matrix(graph, cfg.layer_type)
    nodes = np.arange(graph.num_nodes)
    train_idx = np.flatnonzero(graph.train_mask)
    labels = graph.labels[train_idx]

    h0 = backend.lookup(nodes)
    logits, cache = _forward_all(model, agg, h0)
    loss, _ = softmax_cross_entropy(logits[train_idx], labels)
    _record(state, logits, loss)
    best_val, stale = -1.0, 0
    for _ in range(cfg.epochs):
        t0 = time.perf_counter()
        _, dlog = softmax_cross_entropy(logits[train_idx], labels)
        dlogits = np.zeros_like(logits)
        dlogits[train_idx] = dlog
        grads, dh0 = _backward_all(model, agg, cache, dlogits)
        emb_grads = backend.backward(nodes, dh0)
        optimizer_step(model.params, [g[k] for g in grads for k in sorted(g)], state.model_opt)
        optimizer_step(backend.params, emb_grads, state.backend_opt)
        state.epoch += 1

        h0 = backend.lookup(nodes)
        logits, cache = _forward_all(model, agg, h0)
        loss, _ = softmax_cross_entropy(logits[train_idx], labels)
        state.epoch_seconds.append(time.perf_counter() - t0)
        if not math.isfinite(loss):
            raise FloatingPointError(f"training diverged at epoch {state.epoch}: loss {loss}")
        entry = _record(state, logits, loss)
        if cfg.early_stop_patience is not None:
            if entry["val_acc"] > best_val:
                best_val, stale = entry["val_acc"], 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    return state
