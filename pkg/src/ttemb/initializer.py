"""Initial TT cores: Gaussian, orthogonal-by-construction, or TT-SVD of a
random orthogonal matrix."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .tt_format import TTConfig, TTEmbedding, materialize

__all__ = [
    "InitSpec",
    "InfeasibleRanks",
    "DegenerateBasis",
    "init_gaussian",
    "init_ortho_core",
    "init_decomp_ortho",
    "initialize",
    "gram_schmidt",
    "orthonormal_vectors",
    "random_orthogonal",
    "ttm_decompose",
    "ortho_feasible",
    "verify_claim1",
    "MATERIALIZE_LIMIT",
]

MATERIALIZE_LIMIT = 10**7

Method = Literal["gaussian", "ortho_core", "decomp_ortho"]


class InfeasibleRanks(ValueError):
    """Orthogonal core init cannot fit ``n_k R_{k-1}`` orthonormal vectors."""

    def __init__(self, core: int, need: int, room: int):
        self.core = core
        self.need = need
        self.room = room
        super().__init__(
            f"core {core}: n_k * R_(k-1) = {need} orthonormal vectors do not fit "
            f"in dimension m_k * R_k = {room}"
        )


class DegenerateBasis(RuntimeError):
    pass


@dataclass(frozen=True)
class InitSpec:
    method: Method = "gaussian"
    seed: int = 0
    gaussian_std: float = 0.1
    target_scale: float | Literal["auto"] = "auto"
    dtype: str = "float64"

    def __post_init__(self):
        method = self.method.replace("-", "_")
        if method not in ("gaussian", "ortho_core", "decomp_ortho"):
            raise ValueError(f"unknown init method {self.method!r}")
        object.__setattr__(self, "method", method)
        if self.gaussian_std < 0:
            raise ValueError("gaussian_std must be nonnegative")
        if self.target_scale != "auto" and not self.target_scale > 0:
            raise ValueError("target_scale must be positive or 'auto'")


def _finish(config: TTConfig, cores: list[np.ndarray], spec: InitSpec, base_alpha: float = 1.0):
    if spec.target_scale != "auto":
        # W is linear in each core: scaling all d cores by c scales W^T W by c^(2d).
        # Spread evenly so no core dominates the per-parameter step size.
        c = (spec.target_scale / base_alpha) ** (1.0 / (2 * len(cores)))
        cores = [core * c for core in cores]
    return TTEmbedding(config, [c.astype(spec.dtype) for c in cores])


def init_gaussian(config: TTConfig, spec: InitSpec) -> TTEmbedding:
    rng = np.random.default_rng(spec.seed)
    cores = [rng.normal(0.0, spec.gaussian_std, size=s) for s in config.core_shapes]
    return TTEmbedding(config, [c.astype(spec.dtype) for c in cores])


def gram_schmidt(vectors: np.ndarray, passes: int = 2, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt over the rows of ``vectors``.

    Each row is orthogonalized against the accepted rows ``passes`` times.
    Returns the orthonormalized rows and a boolean mask of rows whose
    residual norm fell below ``tol`` times their original norm.
    """
    q = np.array(vectors, dtype=np.float64, copy=True)
    bad = np.zeros(len(q), dtype=bool)
    for i in range(len(q)):
        v = q[i]
        norm0 = np.linalg.norm(v)
        for _ in range(passes):
            for j in range(i):
                v -= (q[j] @ v) * q[j]
        norm = np.linalg.norm(v)
        if norm0 == 0.0 or norm <= tol * norm0:
            bad[i] = True
            q[i] = 0.0
        else:
            q[i] = v / norm
    return q, bad


def orthonormal_vectors(count: int, dim: int, rng: np.random.Generator, max_retries: int = 10) -> np.ndarray:
    """``count`` orthonormal vectors in R^dim from Gaussian draws, as rows."""
    if count > dim:
        raise ValueError(f"cannot fit {count} orthonormal vectors in dimension {dim}")
    vecs = rng.standard_normal((count, dim))
    for _ in range(max_retries + 1):
        q, bad = gram_schmidt(vecs)
        if not bad.any():
            return q
        vecs[bad] = rng.standard_normal((int(bad.sum()), dim))
    raise DegenerateBasis(f"Gram-Schmidt degenerate after {max_retries} redraws")


def ortho_feasible(config: TTConfig) -> list[tuple[int, int, int]]:
    """Cores violating ``n_k R_(k-1) <= m_k R_k``, as ``(k, need, room)``."""
    out = []
    for k in range(config.d):
        r0, m, n, r1 = config.core_shape(k)
        if n * r0 > m * r1:
            out.append((k, n * r0, m * r1))
    return out


def init_ortho_core(config: TTConfig, spec: InitSpec) -> TTEmbedding:
    """Orthogonal cores built slice by slice.

    For core ``k`` draw ``n_k R_(k-1)`` orthonormal vectors of length
    ``m_k R_k`` and set ``G[r, :, j, :] = v[r n_k + j].reshape(m_k, R_k)``.
    The resulting table has orthonormal columns (``W^T W = I``).
    """
    violations = ortho_feasible(config)
    if violations:
        raise InfeasibleRanks(*violations[0])
    rng = np.random.default_rng(spec.seed)
    cores = []
    for k in range(config.d):
        r0, m, n, r1 = config.core_shape(k)
        v = orthonormal_vectors(n * r0, m * r1, rng)
        # row r*n + j holds slice (r, :, j, :)
        core = v.reshape(r0, n, m, r1).transpose(0, 2, 1, 3)
        cores.append(np.ascontiguousarray(core))
    return _finish(config, cores, spec)


def random_orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Column-orthonormal ``rows x cols`` matrix, Haar distributed.

    QR of a Gaussian matrix with the signs of ``R``'s diagonal folded into Q.
    """
    if cols > rows:
        raise ValueError("need rows >= cols for orthonormal columns")
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def ttm_decompose(
    matrix: np.ndarray,
    row_factors: Sequence[int],
    col_factors: Sequence[int],
    ranks: Sequence[int] | None = None,
    return_discarded: bool = False,
):
    """TT-matrix decomposition of ``matrix`` by sequential truncated SVD.

    ``matrix`` must have shape ``(prod(row_factors), prod(col_factors))``.
    ``ranks`` caps the interior ranks (``None`` keeps every nonzero direction
    up to the unfolding size). A requested rank larger than its unfolding
    allows raises ``ValueError``.

    With ``return_discarded`` the singular values dropped at each step are
    returned too; the squared Frobenius error equals the sum of their squares.
    """
    m = tuple(int(x) for x in row_factors)
    n = tuple(int(x) for x in col_factors)
    d = len(m)
    x = np.asarray(matrix, dtype=np.float64)
    if x.shape != (math.prod(m), math.prod(n)):
        raise ValueError(f"matrix shape {x.shape} does not match factors {m} x {n}")
    if ranks is not None and len(ranks) != d + 1:
        raise ValueError(f"expected {d + 1} ranks")

    y = x.reshape(m + n)
    order = [ax for k in range(d) for ax in (k, d + k)]
    y = y.transpose(order)

    cores = []
    discarded = []
    r_prev = 1
    for k in range(d - 1):
        y = y.reshape(r_prev * m[k] * n[k], -1)
        u, s, vt = np.linalg.svd(y, full_matrices=False)
        full = len(s)
        if ranks is None:
            r = full
        else:
            r = int(ranks[k + 1])
            if r > full:
                raise ValueError(
                    f"rank {r} at core {k + 1} exceeds unfolding dimension {full}"
                )
        discarded.append(s[r:].copy())
        cores.append(u[:, :r].reshape(r_prev, m[k], n[k], r))
        y = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(y.reshape(r_prev, m[-1], n[-1], 1))
    if return_discarded:
        return cores, discarded
    return cores


def init_decomp_ortho(config: TTConfig, spec: InitSpec) -> TTEmbedding:
    """TT-SVD of a random column-orthonormal ``prod(m) x prod(n)`` matrix."""
    rows, cols = config.padded_rows, config.padded_cols
    if rows * cols > MATERIALIZE_LIMIT:
        raise ValueError(f"{rows} x {cols} table exceeds the materialization limit")
    rng = np.random.default_rng(spec.seed)
    x = random_orthogonal(rows, cols, rng)
    cores = ttm_decompose(x, config.row_factors, config.col_factors, config.ranks)
    return _finish(config, cores, spec)


def initialize(config: TTConfig, spec: InitSpec) -> TTEmbedding:
    fn = {
        "gaussian": init_gaussian,
        "ortho_core": init_ortho_core,
        "decomp_ortho": init_decomp_ortho,
    }[spec.method]
    return fn(config, spec)


def verify_claim1(emb: TTEmbedding, tol: float = 1e-8, padded_rows: bool = True) -> dict:
    """Check that the table has scaled-orthonormal columns.

    Materializes ``W`` (all ``prod(m)`` rows by default, since padding rows
    are part of the TT product), forms ``W^T W`` and compares it with
    ``alpha * I`` where ``alpha`` is the mean diagonal entry.
    """
    cfg = emb.config
    rows = cfg.padded_rows if padded_rows else cfg.num_nodes
    if rows * cfg.emb_dim > MATERIALIZE_LIMIT:
        raise ValueError("table too large to materialize")
    w = materialize(emb, padded=True)[:rows, : cfg.emb_dim].astype(np.float64)
    gram = w.T @ w
    alpha = float(np.mean(np.diag(gram)))
    dev = float(np.max(np.abs(gram - alpha * np.eye(cfg.emb_dim))))
    return {"alpha": alpha, "max_deviation": dev, "pass": bool(dev <= tol * alpha)}
