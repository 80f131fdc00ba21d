"""TT-matrix representation of an embedding table.

A table ``W`` of shape ``(M, N)`` is stored as ``d`` four-way cores
``G[k]`` of shape ``(R[k], m[k], n[k], R[k+1])`` with ``R[0] = R[d] = 1``.
Entry ``W[i, j]`` is the product of the matrices ``G[k][:, i_k, j_k, :]``
where ``(i_1, ..., i_d)`` and ``(j_1, ..., j_d)`` are the mixed-radix digits
of ``i`` and ``j`` (most significant digit first).
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "TTConfig",
    "TTEmbedding",
    "balanced_factors",
    "plan_factorization",
    "index_to_coordinate",
    "coordinate_to_index",
    "reconstruct_row",
    "lookup_batch",
    "materialize",
    "count_params",
    "compression_ratio",
    "save_cores",
    "load_cores",
]

_MAGIC = b"TTE1"


@dataclass(frozen=True)
class TTConfig:
    """Factorization plan for an ``M x N`` table.

    ``ranks`` has ``d + 1`` entries with both ends equal to one.
    """

    num_nodes: int
    emb_dim: int
    row_factors: tuple[int, ...]
    col_factors: tuple[int, ...]
    ranks: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "row_factors", tuple(int(x) for x in self.row_factors))
        object.__setattr__(self, "col_factors", tuple(int(x) for x in self.col_factors))
        object.__setattr__(self, "ranks", tuple(int(x) for x in self.ranks))
        d = len(self.row_factors)
        if self.num_nodes < 1 or self.emb_dim < 1:
            raise ValueError("num_nodes and emb_dim must be positive")
        if d < 2:
            raise ValueError(f"need at least 2 cores, got {d}")
        if len(self.col_factors) != d:
            raise ValueError("row_factors and col_factors differ in length")
        if len(self.ranks) != d + 1:
            raise ValueError(f"expected {d + 1} ranks, got {len(self.ranks)}")
        if self.ranks[0] != 1 or self.ranks[-1] != 1:
            raise ValueError("boundary ranks must be 1")
        if min(self.row_factors + self.col_factors + self.ranks) < 1:
            raise ValueError("factors and ranks must be positive")
        if math.prod(self.row_factors) < self.num_nodes:
            raise ValueError("product of row factors is smaller than num_nodes")
        if math.prod(self.col_factors) < self.emb_dim:
            raise ValueError("product of col factors is smaller than emb_dim")

    @property
    def d(self) -> int:
        return len(self.row_factors)

    @property
    def padded_rows(self) -> int:
        return math.prod(self.row_factors)

    @property
    def padded_cols(self) -> int:
        return math.prod(self.col_factors)

    def core_shape(self, k: int) -> tuple[int, int, int, int]:
        """Shape of core ``k`` (0-based)."""
        r = self.ranks
        return (r[k], self.row_factors[k], self.col_factors[k], r[k + 1])

    @property
    def core_shapes(self) -> list[tuple[int, int, int, int]]:
        return [self.core_shape(k) for k in range(self.d)]

    def to_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "emb_dim": self.emb_dim,
            "d": self.d,
            "row_factors": list(self.row_factors),
            "col_factors": list(self.col_factors),
            "ranks": list(self.ranks),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TTConfig":
        return cls(
            num_nodes=data["num_nodes"],
            emb_dim=data["emb_dim"],
            row_factors=data["row_factors"],
            col_factors=data["col_factors"],
            ranks=data["ranks"],
        )


@dataclass
class TTEmbedding:
    config: TTConfig
    cores: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.cores) != self.config.d:
            raise ValueError(f"expected {self.config.d} cores, got {len(self.cores)}")
        for k, core in enumerate(self.cores):
            if core.shape != self.config.core_shape(k):
                raise ValueError(
                    f"core {k} has shape {core.shape}, expected {self.config.core_shape(k)}"
                )

    @property
    def dtype(self):
        return self.cores[0].dtype

    def copy(self) -> "TTEmbedding":
        return TTEmbedding(self.config, [c.copy() for c in self.cores])

    def lookup(self, indices) -> np.ndarray:
        return lookup_batch(self, indices)


def _rank_list(ranks, d: int) -> tuple[int, ...]:
    if isinstance(ranks, (int, np.integer)):
        return (1,) + (int(ranks),) * (d - 1) + (1,)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != d + 1:
        raise ValueError(f"rank list must have d + 1 = {d + 1} entries, got {len(ranks)}")
    return ranks


def balanced_factors(n: int, d: int) -> tuple[int, ...]:
    """Near-equal ``d`` factors whose product is the smallest value ``>= n``.

    Every factor is bounded by ``ceil(n ** (1/d))``. Among factorizations of
    the smallest reachable product the one with the smallest spread wins.
    Factors are returned in ascending order.
    """
    if n < 1:
        raise ValueError("cannot factor a non-positive size")
    if d < 1:
        raise ValueError("d must be positive")
    bound = _iroot_ceil(n, d)
    if d == 1:
        return (n,)
    best = None
    # Enumerate the first d-1 factors in nondecreasing order; the last one
    # is the smallest value that reaches n, and must stay within the bound.
    for head in combinations_with_replacement(range(1, bound + 1), d - 1):
        p = math.prod(head)
        last = max(-(-n // p), head[-1])
        if last > bound:
            continue
        tup = head + (last,)
        key = (p * last, last - head[0], tup)
        if best is None or key < best:
            best = key
    return best[2]


def _iroot_ceil(n: int, d: int) -> int:
    r = max(1, int(round(n ** (1.0 / d))))
    while r**d < n:
        r += 1
    while r > 1 and (r - 1) ** d >= n:
        r -= 1
    return r


def plan_factorization(
    num_nodes: int,
    emb_dim: int,
    d: int = 3,
    ranks=None,
    *,
    row_factors: Sequence[int] | None = None,
    col_factors: Sequence[int] | None = None,
    ortho_friendly: bool = False,
) -> TTConfig:
    """Choose row/column factors and build a :class:`TTConfig`.

    Parameters
    ----------
    num_nodes, emb_dim : int
        Logical table shape ``(M, N)``.
    d : int
        Number of cores.
    ranks : int or sequence of int
        A single interior rank, or the full list ``R[0..d]``.
    row_factors, col_factors : sequence of int, optional
        Explicit factors; skips the search for that dimension.
    ortho_friendly : bool
        Put the largest row factor and the smallest column factor last,
        which loosens the feasibility bound of orthogonal core init.
    """
    if num_nodes < 1 or emb_dim < 1:
        raise ValueError("num_nodes and emb_dim must be positive")
    if d < 2:
        raise ValueError("d must be at least 2")
    ranks = _rank_list(1 if ranks is None else ranks, d)
    m = tuple(row_factors) if row_factors is not None else balanced_factors(num_nodes, d)
    n = tuple(col_factors) if col_factors is not None else balanced_factors(emb_dim, d)
    if len(m) != d or len(n) != d:
        raise ValueError("explicit factors must have d entries")
    if ortho_friendly:
        m = tuple(sorted(m))
        n = tuple(sorted(n, reverse=True))
    return TTConfig(num_nodes, emb_dim, m, n, ranks)


def index_to_coordinate(config: TTConfig, i: int) -> tuple[int, ...]:
    """Mixed-radix digits of row ``i``, most significant first."""
    i = int(i)
    if not 0 <= i < config.padded_rows:
        raise IndexError(f"row index {i} out of range [0, {config.padded_rows})")
    coord = []
    for m in reversed(config.row_factors):
        i, r = divmod(i, m)
        coord.append(r)
    return tuple(reversed(coord))


def coordinate_to_index(config: TTConfig, coord: Sequence[int]) -> int:
    if len(coord) != config.d:
        raise ValueError("coordinate length does not match d")
    i = 0
    for c, m in zip(coord, config.row_factors):
        if not 0 <= c < m:
            raise IndexError(f"coordinate digit {c} out of range [0, {m})")
        i = i * m + int(c)
    return i


def _digits(config: TTConfig, indices: np.ndarray) -> np.ndarray:
    """Vectorized mixed-radix digits; returns shape ``(d, len(indices))``."""
    out = np.empty((config.d, indices.size), dtype=np.int64)
    rest = indices.astype(np.int64, copy=True)
    for k in range(config.d - 1, -1, -1):
        rest, out[k] = np.divmod(rest, config.row_factors[k])
    return out


def _check_indices(config: TTConfig, indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    bad = np.flatnonzero((idx < 0) | (idx >= config.num_nodes))
    if bad.size:
        pos = int(bad[0])
        raise IndexError(
            f"index {int(idx[pos])} at position {pos} out of range [0, {config.num_nodes})"
        )
    return idx


def _chain(cores: Sequence[np.ndarray], digits: np.ndarray) -> np.ndarray:
    """Chained products for a batch of coordinates.

    Returns the full padded rows, shape ``(batch, prod(n))``, and keeps the
    partial products for reuse by the backward pass.
    """
    b = digits.shape[1]
    g = cores[0][0, digits[0]]  # (b, n1, R1)
    w = g
    for k in range(1, len(cores)):
        r_prev, _, n_k, r_k = cores[k].shape
        s = cores[k][:, digits[k]]  # (R_{k-1}, b, n_k, R_k)
        s = np.ascontiguousarray(s.transpose(1, 0, 2, 3)).reshape(b, r_prev, n_k * r_k)
        w = np.matmul(w, s).reshape(b, -1, r_k)
    return w.reshape(b, -1)


def reconstruct_row(emb: TTEmbedding, i: int) -> np.ndarray:
    """Row ``i`` of the padded table, length ``prod(n)``.

    The slices ``G[k][:, i_k]`` are unfolded to ``R[k] x (n[k] R[k+1])``
    matrices and multiplied left to right, reshaping the running product to
    ``(n_1 ... n_k) x R[k+1]`` between steps.
    """
    cfg = emb.config
    i = int(i)
    if not 0 <= i < cfg.num_nodes:
        raise IndexError(f"row index {i} out of range [0, {cfg.num_nodes})")
    coord = index_to_coordinate(cfg, i)
    w = emb.cores[0][0, coord[0]]  # (n1, R1)
    for k in range(1, cfg.d):
        r_prev, _, n_k, r_k = cfg.core_shape(k)
        w = (w @ emb.cores[k][:, coord[k]].reshape(r_prev, n_k * r_k)).reshape(-1, r_k)
    return w.reshape(-1)


def lookup_batch(emb: TTEmbedding, indices) -> np.ndarray:
    """Embedding rows for ``indices``, shape ``(len(indices), N)``."""
    cfg = emb.config
    idx = _check_indices(cfg, indices)
    if idx.size == 0:
        return np.zeros((0, cfg.emb_dim), dtype=emb.dtype)
    rows = _chain(emb.cores, _digits(cfg, idx))
    return rows[:, : cfg.emb_dim]


def materialize(emb: TTEmbedding, padded: bool = False) -> np.ndarray:
    """Dense table. Only sensible for small configs."""
    cfg = emb.config
    n_rows = cfg.padded_rows if padded else cfg.num_nodes
    rows = _chain(emb.cores, _digits(cfg, np.arange(n_rows)))
    return rows if padded else rows[:, : cfg.emb_dim]


def count_params(config: TTConfig) -> int:
    return sum(math.prod(config.core_shape(k)) for k in range(config.d))


def compression_ratio(config: TTConfig) -> float:
    """Dense table size ``M * N`` over the TT parameter count."""
    return config.num_nodes * config.emb_dim / count_params(config)


def save_cores(emb: TTEmbedding, path) -> None:
    """Write cores in the ``TTE1`` binary layout plus a JSON sidecar.

    The binary header is the magic, ``d``, then ``(m_k, n_k, R_{k-1}, R_k)``
    per core, all little-endian u32. Core data follows as little-endian
    float64 in row-major ``(R_{k-1}, m_k, n_k, R_k)`` order.
    """
    path = Path(path)
    cfg = emb.config
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", cfg.d))
        for k in range(cfg.d):
            r0, m, n, r1 = cfg.core_shape(k)
            f.write(struct.pack("<4I", m, n, r0, r1))
        for core in emb.cores:
            f.write(np.ascontiguousarray(core, dtype="<f8").tobytes())
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def load_cores(path) -> TTEmbedding:
    """Read a ``TTE1`` file; ``M`` and ``N`` come from the sidecar if present."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    (d,) = struct.unpack_from("<I", data, 4)
    offset = 8
    shapes = []
    for _ in range(d):
        m, n, r0, r1 = struct.unpack_from("<4I", data, offset)
        offset += 16
        shapes.append((r0, m, n, r1))
    cores = []
    for shape in shapes:
        size = math.prod(shape)
        chunk = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        cores.append(chunk.astype(np.float64).reshape(shape))
        offset += 8 * size
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    m = tuple(s[1] for s in shapes)
    n = tuple(s[2] for s in shapes)
    ranks = tuple(s[0] for s in shapes) + (shapes[-1][3],)
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        cfg = TTConfig(meta["num_nodes"], meta["emb_dim"], m, n, ranks)
    else:
        cfg = TTConfig(math.prod(m), math.prod(n), m, n, ranks)
    return TTEmbedding(cfg, cores)
