"""Multilevel graph partitioning and hierarchical node reordering.

Bisection follows the usual multilevel recipe: heavy-edge matching to
coarsen, greedy graph growing on the coarsest graph, and Fiduccia-Mattheyses
refinement while projecting back. ``k``-way partitions come from recursive
bisection with part budgets chosen so every final part respects the balance
bound.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import CsrGraph, relabel

__all__ = [
    "PartitionHierarchy",
    "partition",
    "bisect",
    "edge_cut",
    "random_balanced_cut",
    "build_hierarchy",
    "reorder",
    "permute_level",
    "leaf_density_ratio",
    "hierarchy_stats",
]

COARSEN_TO = 40


def edge_cut(graph: CsrGraph | sp.spmatrix, assignment) -> int:
    """Number of undirected edges whose endpoints lie in different parts."""
    a = graph.adjacency() if isinstance(graph, CsrGraph) else sp.csr_matrix(graph)
    coo = sp.triu(a, k=1).tocoo()
    assignment = np.asarray(assignment)
    return int(np.sum(coo.data[assignment[coo.row] != assignment[coo.col]]))


def random_balanced_cut(graph: CsrGraph, k: int, seed: int = 0, trials: int = 20) -> float:
    """Mean cut of uniformly random balanced ``k``-way assignments."""
    rng = np.random.default_rng(seed)
    base = np.arange(graph.num_nodes) % k
    cuts = [edge_cut(graph, rng.permutation(base)) for _ in range(trials)]
    return float(np.mean(cuts))


# ---------------------------------------------------------------- coarsening


def _heavy_edge_matching(adj: sp.csr_matrix, vw: np.ndarray, rng, max_vw: float) -> np.ndarray:
    n = adj.shape[0]
    match = np.full(n, -1, dtype=np.int64)
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    for u in rng.permutation(n):
        if match[u] >= 0:
            continue
        best, best_w = -1, 0.0
        for p in range(indptr[u], indptr[u + 1]):
            v = indices[p]
            if v == u or match[v] >= 0 or vw[u] + vw[v] > max_vw:
                continue
            if data[p] > best_w:
                best, best_w = v, data[p]
        if best >= 0:
            match[u] = best
            match[best] = u
        else:
            match[u] = u
    cmap = np.full(n, -1, dtype=np.int64)
    nc = 0
    for u in range(n):
        if cmap[u] < 0:
            cmap[u] = nc
            cmap[match[u]] = nc
            nc += 1
    return cmap


def _contract(adj: sp.csr_matrix, vw: np.ndarray, cmap: np.ndarray):
    nc = int(cmap.max()) + 1
    n = adj.shape[0]
    p = sp.csr_matrix((np.ones(n), (np.arange(n), cmap)), shape=(n, nc))
    cadj = (p.T @ adj @ p).tocsr()
    cadj.setdiag(0)
    cadj.eliminate_zeros()
    cvw = np.bincount(cmap, weights=vw, minlength=nc)
    return cadj, cvw


# ------------------------------------------------------------- refinement


def _cut(adj: sp.csr_matrix, side: np.ndarray) -> float:
    coo = sp.triu(adj, k=1).tocoo()
    return float(np.sum(coo.data[side[coo.row] != side[coo.col]]))


def _fm_refine(adj, vw, side, lo, hi, max_passes=8, patience=64):
    """Fiduccia-Mattheyses passes; ``side`` is modified in place.

    Part 0's weight must end in ``[lo, hi]``. From an unbalanced start only
    moves off the overweight side are allowed until the window is reached.
    """
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    w0 = float(vw[side == 0].sum())
    cut = _cut(adj, side)

    def violation(w):
        return max(0.0, lo - w, w - hi)

    for _ in range(max_passes):
        gain = np.zeros(n)
        for u in range(n):
            s = side[u]
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                if v != u:
                    gain[u] += data[p] if side[v] != s else -data[p]
        heap = [(-gain[u], u) for u in range(n)]
        heapq.heapify(heap)
        locked = np.zeros(n, dtype=bool)
        moves = []
        best = (violation(w0), cut)
        best_len = 0
        cur_w, cur_cut = w0, cut
        since_best = 0
        skipped = []
        while heap and since_best < patience:
            g, u = heapq.heappop(heap)
            if locked[u] or -g != gain[u]:
                continue
            new_w = cur_w - vw[u] if side[u] == 0 else cur_w + vw[u]
            if violation(new_w) > violation(cur_w) and violation(new_w) > 0:
                skipped.append((g, u))
                continue
            # the move is legal; earlier skipped entries may become legal later
            for item in skipped:
                heapq.heappush(heap, item)
            skipped = []
            locked[u] = True
            side[u] ^= 1
            cur_w = new_w
            cur_cut -= gain[u]
            moves.append(u)
            s = side[u]
            gain[u] = -gain[u]
            for p in range(indptr[u], indptr[u + 1]):
                v = indices[p]
                if v == u or locked[v]:
                    continue
                gain[v] += -2 * data[p] if side[v] == s else 2 * data[p]
                heapq.heappush(heap, (-gain[v], v))
            state = (violation(cur_w), cur_cut)
            if state < best:
                best, best_len = state, len(moves)
                since_best = 0
            else:
                since_best += 1
        for u in moves[best_len:]:
            side[u] ^= 1
        improved = best < (violation(w0), cut)
        w0, cut = float(vw[side == 0].sum()), best[1]
        if not improved:
            break
    return side


def _grow(adj, vw, lo, hi, rng):
    """Greedy graph growing: absorb the frontier vertex with the best cut gain."""
    n = adj.shape[0]
    indptr, indices, data = adj.indptr, adj.indices, adj.data
    side = np.ones(n, dtype=np.int8)
    target = 0.5 * (lo + hi)
    gain = np.zeros(n)
    heap = []
    w = 0.0
    order = rng.permutation(n)
    pos = 0
    while w < target:
        while heap:
            g, u = heapq.heappop(heap)
            if side[u] == 1 and -g == gain[u]:
                break
        else:
            while pos < n and side[order[pos]] == 0:
                pos += 1
            if pos == n:
                break
            u = order[pos]
        if w + vw[u] > hi and w >= lo:
            break
        side[u] = 0
        w += vw[u]
        for p in range(indptr[u], indptr[u + 1]):
            v = indices[p]
            if side[v] == 1 and v != u:
                gain[v] += 2 * data[p]
                heapq.heappush(heap, (-gain[v], v))
    return side


def bisect(adj: sp.csr_matrix, vw: np.ndarray, lo: float, hi: float, rng, n_tries: int = 4) -> np.ndarray:
    """Two-way split with part-0 weight in ``[lo, hi]``; returns 0/1 labels."""
    adj = sp.csr_matrix(adj, dtype=np.float64)
    vw = np.asarray(vw, dtype=np.float64)
    levels = []
    cur_adj, cur_vw = adj, vw
    total = float(vw.sum())
    max_vw = max(1.0, 1.5 * total / COARSEN_TO, (hi - lo) / 2 if hi > lo else 1.0)
    while cur_adj.shape[0] > COARSEN_TO:
        cmap = _heavy_edge_matching(cur_adj, cur_vw, rng, max_vw)
        nc = int(cmap.max()) + 1
        if nc > 0.95 * cur_adj.shape[0]:
            break
        levels.append((cur_adj, cur_vw, cmap))
        cur_adj, cur_vw = _contract(cur_adj, cur_vw, cmap)

    best = None
    for _ in range(n_tries):
        side = _grow(cur_adj, cur_vw, lo, hi, rng)
        side = _fm_refine(cur_adj, cur_vw, side, lo, hi)
        w = float(cur_vw[side == 0].sum())
        key = (max(0.0, lo - w, w - hi), _cut(cur_adj, side))
        if best is None or key < best[0]:
            best = (key, side.copy())
    side = best[1]
    for fine_adj, fine_vw, cmap in reversed(levels):
        side = side[cmap].copy()
        side = _fm_refine(fine_adj, fine_vw, side, lo, hi)
    return side.astype(np.int64)


# ---------------------------------------------------------------- k-way


def _recursive(adj, nodes, k, cap, rng, out, offset):
    """Assign parts ``offset .. offset+k-1`` to ``nodes``; every part gets at most ``cap`` nodes."""
    n = nodes.size
    if k == 1:
        out[nodes] = offset
        return
    kl = k // 2
    kr = k - kl
    target = n * kl / k
    lo_feasible = max(n - kr * cap, kl)
    hi_feasible = min(kl * cap, n - kr)
    # spend half the available slack at this level, keep the rest for deeper splits
    tol = 0.5 * min(target - lo_feasible, hi_feasible - target)
    lo = min(math.ceil(target - tol), round(target))
    hi = max(math.floor(target + tol), round(target))
    lo, hi = max(lo, lo_feasible), min(hi, hi_feasible)
    sub = adj[nodes][:, nodes]
    side = bisect(sub, np.ones(n), lo, hi, rng)
    _recursive(adj, nodes[side == 0], kl, cap, rng, out, offset)
    _recursive(adj, nodes[side == 1], kr, cap, rng, out, offset + kl)


def partition(graph: CsrGraph | sp.spmatrix, k: int, seed: int = 0, imbalance: float = 0.05) -> np.ndarray:
    """Balanced ``k``-way partition minimizing edge cut heuristically.

    Every part has at most ``floor((1 + imbalance) * ceil(n / k))`` nodes.
    """
    adj = graph.adjacency() if isinstance(graph, CsrGraph) else sp.csr_matrix(graph, dtype=np.float64)
    n = adj.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    cap = max(math.ceil(n / k), math.floor((1 + imbalance) * math.ceil(n / k)))
    out = np.zeros(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    _recursive(adj.tocsr(), np.arange(n), k, cap, rng, out, 0)
    return out


# ---------------------------------------------------------------- hierarchy


@dataclass
class PartitionHierarchy:
    """Nested partitions and the induced contiguous node order.

    ``assignments[l][v]`` is the global id of ``v``'s level-``l+1`` part; ids at
    level ``l+1`` are ``parent * branching[l] + local``. ``permutation`` maps old
    ids to new ids, ``inverse`` maps back.
    """

    branching: tuple[int, ...]
    assignments: list[np.ndarray]
    permutation: np.ndarray
    inverse: np.ndarray

    @property
    def levels(self) -> int:
        return len(self.branching)

    @property
    def num_nodes(self) -> int:
        return self.permutation.size

    def leaf_ranges(self) -> list[tuple[int, int]]:
        """``[start, stop)`` new-id range of every leaf, in leaf-id order."""
        leaf = self.assignments[-1]
        sizes = np.bincount(leaf, minlength=math.prod(self.branching))
        ends = np.cumsum(sizes)
        return [(int(e - s), int(e)) for s, e in zip(sizes, ends)]


def _order_by(keys: np.ndarray, current: np.ndarray) -> np.ndarray:
    """New ids sorted by ``keys`` with ties broken by ``current`` order."""
    order = np.lexsort((current, keys))
    perm = np.empty_like(order)
    perm[order] = np.arange(order.size)
    return perm


def build_hierarchy(graph: CsrGraph, branching: Sequence[int], seed: int = 0, imbalance: float = 0.05) -> PartitionHierarchy:
    """Recursively split ``graph``: ``branching[0]`` parts, then each part into ``branching[1]``, ...

    New ids are assigned leaf by leaf in leaf-id order, so every leaf occupies
    a contiguous range; nodes inside a leaf keep their input order.
    """
    branching = tuple(int(p) for p in branching)
    n = graph.num_nodes
    if not branching or min(branching) < 1:
        raise ValueError("branching factors must be positive")
    if math.prod(branching) > n:
        raise ValueError(f"{math.prod(branching)} leaves exceed {n} nodes")
    adj = graph.adjacency()
    current = np.zeros(n, dtype=np.int64)
    assignments = []
    for level, p in enumerate(branching):
        nxt = np.empty(n, dtype=np.int64)
        for part in range(int(current.max()) + 1 if n else 0):
            nodes = np.flatnonzero(current == part)
            if nodes.size == 0:
                continue
            k = min(p, nodes.size)
            local = partition(adj[nodes][:, nodes], k, seed=seed + 7919 * level + part, imbalance=imbalance)
            nxt[nodes] = part * p + local
        current = nxt
        assignments.append(current.copy())
    perm = _order_by(current, np.arange(n))
    inv = np.empty_like(perm)
    inv[perm] = np.arange(n)
    return PartitionHierarchy(branching, assignments, perm, inv)


def reorder(graph: CsrGraph, hierarchy: PartitionHierarchy) -> CsrGraph:
    if hierarchy.num_nodes != graph.num_nodes:
        raise ValueError("hierarchy was built for a graph of a different size")
    return relabel(graph, hierarchy.permutation)


def permute_level(
    hierarchy: PartitionHierarchy,
    level: Literal["none", "first", "second"],
    seed: int = 0,
) -> np.ndarray:
    """Permutation (old id -> new id) with level-1 or level-2 blocks shuffled.

    ``first`` shuffles the order of the top-level blocks, ``second`` shuffles
    all second-level blocks globally; order inside a block is kept.
    """
    depth = {"none": 0, "first": 1, "second": 2}.get(level)
    if depth is None:
        raise ValueError(f"unknown level {level!r}")
    if depth == 0:
        return hierarchy.permutation.copy()
    if hierarchy.levels < depth:
        raise ValueError(f"hierarchy has {hierarchy.levels} level(s), '{level}' needs {depth}")
    blocks = hierarchy.assignments[depth - 1]
    n_blocks = math.prod(hierarchy.branching[:depth])
    rank = np.random.default_rng(seed).permutation(n_blocks)
    return _order_by(rank[blocks], hierarchy.permutation)


def leaf_density_ratio(graph: CsrGraph, assignment: np.ndarray) -> float:
    """Edge density inside parts divided by edge density across parts."""
    e = graph.edges()
    e = e[e[:, 0] != e[:, 1]]
    same = assignment[e[:, 0]] == assignment[e[:, 1]]
    sizes = np.bincount(assignment).astype(np.float64)
    n = graph.num_nodes
    intra_pairs = float(np.sum(sizes * (sizes - 1) / 2))
    cross_pairs = n * (n - 1) / 2 - intra_pairs
    intra = same.sum() / intra_pairs if intra_pairs else 0.0
    cross = (~same).sum() / cross_pairs if cross_pairs else 0.0
    return float(intra / cross) if cross else math.inf


def hierarchy_stats(graph: CsrGraph, hierarchy: PartitionHierarchy) -> dict:
    levels = []
    for l, a in enumerate(hierarchy.assignments):
        sizes = np.bincount(a, minlength=math.prod(hierarchy.branching[: l + 1]))
        levels.append(
            {
                "level": l + 1,
                "parts": int(sizes.size),
                "edge_cut": edge_cut(graph, a),
                "max_part": int(sizes.max()),
                "min_part": int(sizes.min()),
            }
        )
    return {"num_nodes": graph.num_nodes, "num_edges": graph.num_edges, "levels": levels}
