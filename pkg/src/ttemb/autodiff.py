"""Backward pass for TT lookups and first-order optimizer updates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .tt_format import TTEmbedding, _check_indices, _digits

__all__ = [
    "CoreGradients",
    "OptimizerState",
    "backward_lookup",
    "apply_update",
    "optimizer_step",
]


@dataclass
class CoreGradients:
    grads: list[np.ndarray]
    batch_count: int = 0

    def __add__(self, other: "CoreGradients") -> "CoreGradients":
        return CoreGradients(
            [a + b for a, b in zip(self.grads, other.grads)],
            self.batch_count + other.batch_count,
        )


@dataclass
class OptimizerState:
    kind: Literal["sgd", "adam"] = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def backward_lookup(emb: TTEmbedding, indices, upstream: np.ndarray) -> CoreGradients:
    """Gradients of ``sum(upstream * lookup_batch(emb, indices))`` per core.

    For a row with digits ``(i_1, ..., i_d)`` the slice ``G_k[:, i_k]``
    receives ``L^T . U . R^T`` where ``L`` is the product of the slices left
    of ``k`` (``(n_1 .. n_{k-1}) x R_{k-1}``), ``R`` the product right of
    ``k`` (``R_k x (n_{k+1} .. n_d)``) and ``U`` the upstream row reshaped to
    ``(n_1 .. n_{k-1}) x n_k x (n_{k+1} .. n_d)``. Rows accumulate in input
    order, so duplicates add up and the result is deterministic.
    """
    cfg = emb.config
    idx = _check_indices(cfg, indices)
    upstream = np.asarray(upstream)
    if upstream.shape != (idx.size, cfg.emb_dim):
        raise ValueError(
            f"upstream shape {upstream.shape} does not match ({idx.size}, {cfg.emb_dim})"
        )
    grads = [np.zeros_like(c) for c in emb.cores]
    b = idx.size
    if b == 0:
        return CoreGradients(grads, 0)

    u = np.zeros((b, cfg.padded_cols), dtype=np.result_type(upstream, emb.dtype))
    u[:, : cfg.emb_dim] = upstream

    digits = _digits(cfg, idx)
    d = cfg.d
    # slices[k]: (b, R_{k-1}, n_k, R_k)
    slices = [emb.cores[k][:, digits[k]].transpose(1, 0, 2, 3) for k in range(d)]

    # left[k]: (b, n_1..n_{k-1}, R_{k-1}); left[0] is a 1x1 identity.
    left = [np.ones((b, 1, 1), dtype=u.dtype)]
    for k in range(d - 1):
        _, r0, n, r1 = slices[k].shape
        nxt = np.matmul(left[k], slices[k].reshape(b, r0, n * r1))
        left.append(nxt.reshape(b, -1, r1))

    # right[k]: (b, R_k, n_{k+1}..n_d); right[d-1] is a 1x1 identity.
    right = [None] * d
    right[d - 1] = np.ones((b, 1, 1), dtype=u.dtype)
    for k in range(d - 1, 0, -1):
        _, r0, n, r1 = slices[k].shape
        nxt = np.matmul(slices[k].reshape(b, r0 * n, r1), right[k])
        right[k - 1] = nxt.reshape(b, r0, -1)

    for k in range(d):
        _, r0, n, r1 = slices[k].shape
        pl = left[k].shape[1]
        pr = right[k].shape[2]
        uk = u.reshape(b, pl, n * pr)
        g = np.matmul(left[k].transpose(0, 2, 1), uk)  # (b, R_{k-1}, n * pr)
        g = np.matmul(g.reshape(b, r0 * n, pr), right[k].transpose(0, 2, 1))
        g = g.reshape(b, r0, n, r1)
        # scatter into (m_k, R_{k-1}, n_k, R_k) view of the core gradient
        view = grads[k].transpose(1, 0, 2, 3)
        np.add.at(view, digits[k], g)
    return CoreGradients(grads, b)


def optimizer_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], opt: OptimizerState) -> None:
    """Update ``params`` in place. Rejects non-finite gradients before touching anything."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient {k} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise FloatingPointError(f"gradient {k} has {bad} non-finite entries; update rejected")
    opt.step += 1
    if opt.kind == "sgd":
        for p, g in zip(params, grads):
            if opt.weight_decay:
                g = g + opt.weight_decay * p
            p -= opt.learning_rate * g
        return
    if not opt.first_moment:
        opt.first_moment = [np.zeros_like(p) for p in params]
        opt.second_moment = [np.zeros_like(p) for p in params]
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1**opt.step
    c2 = 1.0 - b2**opt.step
    for p, g, m, v in zip(params, grads, opt.first_moment, opt.second_moment):
        if opt.weight_decay:
            g = g + opt.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.epsilon)


def apply_update(emb: TTEmbedding, grads: CoreGradients, opt: OptimizerState):
    """One optimizer step on the cores (in place). Returns ``(emb, opt)``."""
    optimizer_step(emb.cores, grads.grads, opt)
    return emb, opt
