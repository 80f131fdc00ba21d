import math

import numpy as np
import pytest

from ttemb.initializer import (
    DegenerateBasis,
    InfeasibleRanks,
    InitSpec,
    gram_schmidt,
    init_decomp_ortho,
    init_gaussian,
    init_ortho_core,
    orthonormal_vectors,
    random_orthogonal,
    ttm_decompose,
    verify_claim1,
)
from ttemb.tt_format import TTConfig, TTEmbedding, materialize, plan_factorization


def feasible_configs(rng, count, max_rows=4096, max_cols=64, max_rank=8):
    out = []
    while len(out) < count:
        d = int(rng.integers(2, 4))
        m = tuple(int(x) for x in rng.integers(2, 17, d))
        n = tuple(int(x) for x in rng.integers(1, 5, d))
        r = (1,) + tuple(int(x) for x in rng.integers(1, max_rank + 1, d - 1)) + (1,)
        if math.prod(m) > max_rows or math.prod(n) > max_cols:
            continue
        if any(n[k] * r[k] > m[k] * r[k + 1] for k in range(d)):
            continue
        out.append(TTConfig(math.prod(m), math.prod(n), m, n, r))
    return out


def slice_vectors(core):
    r0, m, n, r1 = core.shape
    return core.transpose(0, 2, 1, 3).reshape(r0 * n, m * r1)


class TestGaussian:
    def test_zero_std(self):
        cfg = plan_factorization(27, 8, 3, 2)
        emb = init_gaussian(cfg, InitSpec("gaussian", 1, gaussian_std=0.0))
        assert all(not c.any() for c in emb.cores)

    def test_deterministic(self):
        cfg = plan_factorization(100, 16, 3, 4)
        a = init_gaussian(cfg, InitSpec("gaussian", 7))
        b = init_gaussian(cfg, InitSpec("gaussian", 7))
        assert all(np.array_equal(x, y) for x, y in zip(a.cores, b.cores))

    def test_moments(self):
        cfg = TTConfig(64**3, 8, (64, 64, 64), (2, 2, 2), (1, 32, 32, 1))
        emb = init_gaussian(cfg, InitSpec("gaussian", 3, gaussian_std=0.1))
        x = np.concatenate([c.ravel() for c in emb.cores])
        assert x.size >= 10**5
        assert abs(x.mean()) <= 3 * 0.1 / math.sqrt(x.size)
        assert abs(x.std() - 0.1) <= 0.005


class TestGramSchmidt:
    def test_orthonormal(self, rng):
        q = orthonormal_vectors(12, 20, rng)
        np.testing.assert_allclose(q @ q.T, np.eye(12), atol=1e-12)

    def test_flags_dependent_rows(self):
        v = np.array([[1.0, 0, 0], [2.0, 0, 0], [0, 1.0, 0]])
        q, bad = gram_schmidt(v)
        assert bad.tolist() == [False, True, False]

    def test_too_many(self, rng):
        with pytest.raises(ValueError):
            orthonormal_vectors(5, 4, rng)

    def test_degenerate_after_retries(self):
        class Zeros:
            def standard_normal(self, shape):
                return np.zeros(shape)

        with pytest.raises(DegenerateBasis):
            orthonormal_vectors(2, 3, Zeros(), max_retries=2)


class TestOrthoCore:
    def test_small_materialized(self):
        cfg = TTConfig(16, 4, (4, 4), (2, 2), (1, 2, 1))
        w = materialize(init_ortho_core(cfg, InitSpec("ortho_core", 0)))
        g = w.T @ w
        assert np.max(np.abs(g - g[0, 0] * np.eye(4))) <= 1e-10

    def test_rank_one_unit_vectors(self):
        cfg = TTConfig(60, 1, (3, 4, 5), (1, 1, 1), (1, 1, 1, 1))
        emb = init_ortho_core(cfg, InitSpec("ortho_core", 2))
        for core in emb.cores:
            assert np.linalg.norm(core) == pytest.approx(1.0, abs=1e-12)
        w = materialize(emb)
        assert np.linalg.norm(w[:, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_column_norms_constant(self):
        cfg = TTConfig(64, 8, (4, 4, 4), (2, 2, 2), (1, 2, 2, 1))
        w = materialize(init_ortho_core(cfg, InitSpec("ortho_core", 5)))
        norms = np.linalg.norm(w, axis=0)
        np.testing.assert_allclose(norms, norms[0], atol=1e-12)

    def test_arxiv_feasibility(self):
        big = plan_factorization(169363, 128, 3, 32, row_factors=(55, 55, 56), col_factors=(8, 4, 4))
        with pytest.raises(InfeasibleRanks) as info:
            init_ortho_core(big, InitSpec("ortho_core", 0))
        assert info.value.core == 2
        assert (info.value.need, info.value.room) == (128, 56)
        ok = plan_factorization(169363, 128, 3, 8, row_factors=(55, 55, 56), col_factors=(8, 4, 4))
        emb = init_ortho_core(ok, InitSpec("ortho_core", 0))
        assert emb.cores[2].shape == (8, 56, 4, 1)

    def test_slice_orthonormality(self, rng):
        for cfg in feasible_configs(rng, 10):
            emb = init_ortho_core(cfg, InitSpec("ortho_core", int(rng.integers(1000))))
            for core in emb.cores:
                v = slice_vectors(core)
                np.testing.assert_allclose(v @ v.T, np.eye(len(v)), atol=1e-10)

    def test_orthogonal_columns_random_configs(self, rng):
        for cfg in feasible_configs(rng, 20):
            res = verify_claim1(init_ortho_core(cfg, InitSpec("ortho_core", int(rng.integers(1000)))), tol=1e-8)
            assert res["pass"], (cfg, res)
            assert res["alpha"] == pytest.approx(1.0)

    def test_deterministic(self):
        cfg = TTConfig(64, 8, (4, 4, 4), (2, 2, 2), (1, 2, 2, 1))
        a = init_ortho_core(cfg, InitSpec("ortho_core", 9))
        b = init_ortho_core(cfg, InitSpec("ortho_core", 9))
        assert all(np.array_equal(x, y) for x, y in zip(a.cores, b.cores))

    def test_target_scale(self):
        cfg = TTConfig(64, 8, (4, 4, 4), (2, 2, 2), (1, 2, 2, 1))
        res = verify_claim1(init_ortho_core(cfg, InitSpec("ortho_core", 1, target_scale=64.0)))
        assert res["pass"] and res["alpha"] == pytest.approx(64.0)


class TestDecomposition:
    def test_exact_at_full_rank(self, rng):
        x = random_orthogonal(8, 4, rng)
        cores = ttm_decompose(x, (2, 2, 2), (2, 1, 2), (1, 4, 4, 1))
        cfg = TTConfig(8, 4, (2, 2, 2), (2, 1, 2), (1, 4, 4, 1))
        np.testing.assert_allclose(materialize(TTEmbedding(cfg, cores)), x, atol=1e-10)

    def test_identity_columns(self):
        x = np.eye(16)[:, :4]
        cores = ttm_decompose(x, (2, 2, 4), (1, 2, 2))
        ranks = (1,) + tuple(c.shape[3] for c in cores[:-1]) + (1,)
        cfg = TTConfig(16, 4, (2, 2, 4), (1, 2, 2), ranks)
        np.testing.assert_allclose(materialize(TTEmbedding(cfg, cores)), x, atol=1e-12)

    def test_truncation_error_matches_discarded(self, rng):
        x = random_orthogonal(16, 4, rng)
        m, n, r = (2, 2, 4), (2, 2, 1), (1, 2, 2, 1)
        cores, dropped = ttm_decompose(x, m, n, r, return_discarded=True)
        w = materialize(TTEmbedding(TTConfig(16, 4, m, n, r), cores))
        err = np.linalg.norm(w - x)
        bound = math.sqrt(sum(float(np.sum(s**2)) for s in dropped))
        assert abs(err - bound) <= 1e-8
        # first unfolding computed independently: rows (i1, j1), cols the rest
        unf = x.reshape(2, 2, 4, 2, 2, 1).transpose(0, 3, 1, 4, 2, 5).reshape(4, -1)
        s = np.linalg.svd(unf, compute_uv=False)
        np.testing.assert_allclose(dropped[0], s[2:], atol=1e-12)
        assert err > 1e-3

    def test_rank_too_large(self, rng):
        with pytest.raises(ValueError, match="exceeds"):
            ttm_decompose(rng.standard_normal((8, 4)), (2, 2, 2), (2, 2, 1), (1, 4, 4, 1))

    def test_round_trip_random_matrix(self, rng):
        x = rng.standard_normal((24, 6))
        cores = ttm_decompose(x, (2, 3, 4), (3, 2, 1))
        ranks = (1,) + tuple(c.shape[3] for c in cores[:-1]) + (1,)
        w = materialize(TTEmbedding(TTConfig(24, 6, (2, 3, 4), (3, 2, 1), ranks), cores))
        assert np.linalg.norm(w - x) / np.linalg.norm(x) <= 1e-9

    def test_init_decomp_ortho_full_rank_is_orthogonal(self):
        cfg = TTConfig(64, 8, (4, 4, 4), (2, 2, 2), (1, 8, 8, 1))
        res = verify_claim1(init_decomp_ortho(cfg, InitSpec("decomp_ortho", 4)))
        assert res["pass"] and res["alpha"] == pytest.approx(1.0)

    def test_haar_sign_convention(self, rng):
        q = random_orthogonal(10, 4, rng)
        np.testing.assert_allclose(q.T @ q, np.eye(4), atol=1e-12)


class TestVerifyOrthogonality:
    def test_gaussian_fails(self):
        cfg = TTConfig(256, 16, (4, 8, 8), (2, 2, 4), (1, 4, 4, 1))
        res = verify_claim1(init_gaussian(cfg, InitSpec("gaussian", 0, gaussian_std=0.1)), tol=1e-3)
        assert not res["pass"]

    def test_one_by_one(self):
        cfg = TTConfig(1, 1, (1, 1), (1, 1), (1, 1, 1))
        emb = TTEmbedding(cfg, [np.full((1, 1, 1, 1), 3.0), np.full((1, 1, 1, 1), -0.5)])
        res = verify_claim1(emb)
        assert res["pass"] and res["alpha"] == pytest.approx(2.25)
        assert res["max_deviation"] == 0.0

    def test_guard(self):
        cfg = TTConfig(10**6, 64, (100, 100, 100), (4, 4, 4), (1, 1, 1, 1))
        with pytest.raises(ValueError):
            verify_claim1(TTEmbedding(cfg, [np.zeros(s) for s in cfg.core_shapes]))


def test_unknown_method():
    with pytest.raises(ValueError):
        InitSpec("laplacian")
