"""Undirected graphs in CSR form, the SBM benchmark generator and text I/O."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CsrGraph",
    "from_edges",
    "generate_sbm",
    "split_masks",
    "relabel",
    "shuffle_nodes",
    "load_edge_list",
    "write_edge_list",
    "write_labels",
    "write_permutation",
    "read_permutation",
]


@dataclass(frozen=True)
class CsrGraph:
    """Symmetric adjacency in CSR layout.

    ``neighbors[row_offsets[v]:row_offsets[v + 1]]`` lists the neighbors of
    ``v`` in increasing order. Every undirected edge is stored as two arcs.
    """

    num_nodes: int
    row_offsets: np.ndarray
    neighbors: np.ndarray
    labels: np.ndarray | None = None
    train_mask: np.ndarray | None = None
    val_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None

    @property
    def num_arcs(self) -> int:
        return int(self.neighbors.size)

    @property
    def num_edges(self) -> int:
        """Undirected edge count (a self loop counts once)."""
        loops = int(np.count_nonzero(self.neighbors == np.repeat(np.arange(self.num_nodes), self.degrees)))
        return (self.num_arcs - loops) // 2 + loops

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    @property
    def num_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.row_offsets[v] : self.row_offsets[v + 1]]

    def adjacency(self, dtype=np.float64) -> sp.csr_matrix:
        data = np.ones(self.num_arcs, dtype=dtype)
        return sp.csr_matrix((data, self.neighbors, self.row_offsets), shape=(self.num_nodes, self.num_nodes))

    def edges(self) -> np.ndarray:
        """Undirected edges ``(u, v)`` with ``u <= v``, shape ``(E, 2)``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = src <= self.neighbors
        return np.stack([src[keep], self.neighbors[keep]], axis=1)

    def subgraph(self, nodes: np.ndarray) -> sp.csr_matrix:
        """Adjacency of the induced subgraph on ``nodes`` (in the given order)."""
        a = self.adjacency()
        return a[nodes][:, nodes].tocsr()


def from_edges(num_nodes: int, edges, labels=None, **masks) -> CsrGraph:
    """Build a graph from ``(u, v)`` pairs, adding reversed arcs and dropping duplicates."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if num_nodes < 1:
        raise ValueError("graph must have at least one node")
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        raise ValueError(f"edge endpoint out of range [0, {num_nodes})")
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    a = sp.coo_matrix((np.ones(src.size), (src, dst)), shape=(num_nodes, num_nodes)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (num_nodes,):
            raise ValueError("labels must have one entry per node")
    masks = {k: (None if v is None else np.asarray(v, dtype=bool)) for k, v in masks.items()}
    return CsrGraph(
        num_nodes,
        a.indptr.astype(np.int64),
        a.indices.astype(np.int64),
        labels,
        **masks,
    )


def split_masks(labels: np.ndarray, rng: np.random.Generator, fractions=(0.6, 0.2)):
    """Per-class train/val/test masks; the rest after train and val is test."""
    n = labels.size
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_train = int(round(fractions[0] * members.size))
        n_val = int(round(fractions[1] * members.size))
        train[members[:n_train]] = True
        val[members[n_train : n_train + n_val]] = True
    return train, val, ~(train | val)


def generate_sbm(num_nodes: int, num_blocks: int, p_in: float, p_out: float, seed: int = 0) -> CsrGraph:
    """Stochastic block model with contiguous blocks as labels.

    Blocks differ in size by at most one node. Each block pair draws a
    binomial edge count and then that many distinct node pairs.
    """
    if not (0.0 <= p_out <= 1.0 and 0.0 <= p_in <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if p_in < p_out:
        raise ValueError("p_in must be at least p_out for a homophilic graph")
    if not 1 <= num_blocks <= num_nodes:
        raise ValueError("need 1 <= num_blocks <= num_nodes")
    rng = np.random.default_rng(seed)
    sizes = np.full(num_blocks, num_nodes // num_blocks)
    sizes[: num_nodes % num_blocks] += 1
    starts = np.concatenate([[0], np.cumsum(sizes)])
    labels = np.repeat(np.arange(num_blocks), sizes)

    chunks = []
    for a in range(num_blocks):
        for b in range(a, num_blocks):
            p = p_in if a == b else p_out
            if a == b:
                n_pairs = sizes[a] * (sizes[a] - 1) // 2
            else:
                n_pairs = sizes[a] * sizes[b]
            count = rng.binomial(n_pairs, p) if n_pairs else 0
            if count == 0:
                continue
            flat = rng.choice(n_pairs, size=count, replace=False)
            if a == b:
                # decode the strict upper triangle, row-major
                s = int(sizes[a])
                r = np.arange(s)
                row_start = r * (2 * s - r - 1) // 2
                row = np.searchsorted(row_start, flat, side="right") - 1
                col = flat - row_start[row] + row + 1
                u, v = starts[a] + row, starts[a] + col
            else:
                u = starts[a] + flat // sizes[b]
                v = starts[b] + flat % sizes[b]
            chunks.append(np.stack([u, v], axis=1))
    edges = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)
    train, val, test = split_masks(labels, rng)
    return from_edges(num_nodes, edges, labels, train_mask=train, val_mask=val, test_mask=test)


def relabel(graph: CsrGraph, perm: np.ndarray) -> CsrGraph:
    """Rename node ``v`` to ``perm[v]``; labels and masks move with it."""
    perm = np.asarray(perm, dtype=np.int64)
    n = graph.num_nodes
    if perm.shape != (n,):
        raise ValueError(f"permutation has length {perm.size}, graph has {n} nodes")
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("not a permutation")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(n)
    p = sp.csr_matrix((np.ones(n), (perm, np.arange(n))), shape=(n, n))
    a = (p @ graph.adjacency() @ p.T).tocsr()
    a.sort_indices()

    def move(x):
        return None if x is None else x[inv]

    return CsrGraph(
        n,
        a.indptr.astype(np.int64),
        a.indices.astype(np.int64),
        move(graph.labels),
        move(graph.train_mask),
        move(graph.val_mask),
        move(graph.test_mask),
    )


def shuffle_nodes(graph: CsrGraph, seed: int, return_permutation: bool = False):
    """Uniformly random relabeling; optionally also return ``old -> new``."""
    perm = np.random.default_rng(seed).permutation(graph.num_nodes)
    out = relabel(graph, perm)
    return (out, perm) if return_permutation else out


def _parse_pairs(path: Path, what: str) -> np.ndarray:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected two integers per {what} line, got {line.strip()!r}")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer field in {line.strip()!r}") from None
            if a < 0 or (what == "edge" and b < 0):
                raise ValueError(f"{path}:{lineno}: negative node id")
            rows.append((a, b))
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def load_edge_list(path, label_path=None, num_nodes: int | None = None, seed: int = 0) -> CsrGraph:
    """Read whitespace-separated ``u v`` lines (0-based) plus optional ``node label`` lines.

    With labels present, train/val/test masks are drawn per class with ``seed``.
    """
    edges = _parse_pairs(Path(path), "edge")
    labels = None
    if label_path is not None:
        pairs = _parse_pairs(Path(label_path), "label")
        n_lab = int(pairs[:, 0].max()) + 1 if pairs.size else 0
    n = num_nodes
    if n is None:
        n = int(edges.max()) + 1 if edges.size else 0
        if label_path is not None:
            n = max(n, n_lab)
    if n == 0:
        raise ValueError(f"{path}: graph has no nodes")
    masks = {}
    if label_path is not None:
        labels = np.full(n, -1, dtype=np.int64)
        labels[pairs[:, 0]] = pairs[:, 1]
        if (labels < 0).any():
            missing = int(np.flatnonzero(labels < 0)[0])
            raise ValueError(f"{label_path}: no label for node {missing}")
        train, val, test = split_masks(labels, np.random.default_rng(seed))
        masks = dict(train_mask=train, val_mask=val, test_mask=test)
    return from_edges(n, edges, labels, **masks)


def write_edge_list(graph: CsrGraph, path) -> None:
    np.savetxt(path, graph.edges(), fmt="%d")


def write_labels(graph: CsrGraph, path) -> None:
    if graph.labels is None:
        raise ValueError("graph has no labels")
    np.savetxt(path, np.stack([np.arange(graph.num_nodes), graph.labels], axis=1), fmt="%d")


def write_permutation(perm: np.ndarray, path) -> None:
    """One new id per line; the line number is the old id."""
    np.savetxt(path, np.asarray(perm, dtype=np.int64), fmt="%d")


def read_permutation(path) -> np.ndarray:
    perm = np.loadtxt(path, dtype=np.int64, ndmin=1)
    if not np.array_equal(np.sort(perm), np.arange(perm.size)):
        raise ValueError(f"{path}: not a permutation")
    return perm
