import math

import numpy as np
import pytest

from ttemb.graph import from_edges, generate_sbm, relabel
from ttemb.partition import (
    build_hierarchy,
    edge_cut,
    hierarchy_stats,
    leaf_density_ratio,
    partition,
    permute_level,
    random_balanced_cut,
    reorder,
)


def clique_edges(nodes):
    return [(u, v) for i, u in enumerate(nodes) for v in nodes[i + 1 :]]


def two_cliques(size=10):
    a = list(range(size))
    b = list(range(size, 2 * size))
    return from_edges(2 * size, clique_edges(a) + clique_edges(b))


def planted_2x2(rng, size=8):
    """Four cliques; cliques 0-1 and 2-3 share a few bridges, the pairs share one."""
    groups = [list(range(size * g, size * (g + 1))) for g in range(4)]
    edges = [e for g in groups for e in clique_edges(g)]
    for a, b in ((0, 1), (2, 3)):
        for _ in range(3):
            edges.append((int(rng.choice(groups[a])), int(rng.choice(groups[b]))))
    edges.append((groups[1][0], groups[2][0]))
    g = from_edges(4 * size, edges)
    perm = rng.permutation(4 * size)
    return relabel(g, perm), perm


def same_blocks(x, y):
    """True when two labelings induce the same partition."""
    pairs = set(zip(x.tolist(), y.tolist()))
    return len(pairs) == len(set(x.tolist())) == len(set(y.tolist()))


class TestPartition:
    def test_two_cliques(self):
        g = two_cliques(10)
        a = partition(g, 2, seed=0)
        assert edge_cut(g, a) == 0
        assert np.bincount(a).tolist() == [10, 10]

    def test_k1(self):
        g = generate_sbm(50, 2, 0.2, 0.05, seed=0)
        a = partition(g, 1)
        assert not a.any() and edge_cut(g, a) == 0

    def test_sbm_beats_random(self):
        g = generate_sbm(1000, 10, 0.08, 0.002, seed=0)
        a = partition(g, 10, seed=0)
        assert edge_cut(g, a) <= 0.5 * random_balanced_cut(g, 10, seed=0)

    @pytest.mark.parametrize("n,k", [(97, 4), (200, 7), (64, 8), (33, 33)])
    def test_balance(self, n, k):
        g = generate_sbm(n, 3, 0.2, 0.05, seed=n)
        a = partition(g, k, seed=1, imbalance=0.05)
        cap = max(math.ceil(n / k), math.floor(1.05 * math.ceil(n / k)))
        sizes = np.bincount(a, minlength=k)
        assert sizes.size == k and sizes.max() <= cap and sizes.min() > 0

    def test_deterministic(self):
        g = generate_sbm(300, 5, 0.1, 0.01, seed=2)
        assert np.array_equal(partition(g, 5, seed=3), partition(g, 5, seed=3))

    def test_bad_k(self):
        g = two_cliques(3)
        with pytest.raises(ValueError):
            partition(g, 0)
        with pytest.raises(ValueError):
            partition(g, 7)


class TestHierarchy:
    def test_single_level_one_part(self):
        g = generate_sbm(40, 2, 0.3, 0.05, seed=0)
        h = build_hierarchy(g, [1])
        assert np.array_equal(h.permutation, np.arange(40))

    def test_planted_structure(self, rng):
        g, perm = planted_2x2(rng)
        truth_leaf = np.empty(32, dtype=np.int64)
        truth_leaf[perm] = np.arange(32) // 8
        h = build_hierarchy(g, [2, 2], seed=0)
        assert same_blocks(h.assignments[1], truth_leaf)
        assert same_blocks(h.assignments[0], truth_leaf // 2)

    def test_density_ratio_on_sbm(self):
        g = generate_sbm(1000, 10, 0.08, 0.002, seed=1)
        h = build_hierarchy(g, [10], seed=0)
        assert leaf_density_ratio(g, h.assignments[-1]) >= 5.0

    def test_nesting_and_contiguity(self):
        g = generate_sbm(400, 8, 0.1, 0.005, seed=3)
        h = build_hierarchy(g, [2, 4], seed=0)
        top, leaf = h.assignments
        assert np.array_equal(leaf // 4, top)
        new_leaf = np.empty(400, dtype=np.int64)
        new_leaf[h.permutation] = leaf
        # leaves appear in nondecreasing order along new ids
        assert np.all(np.diff(new_leaf) >= 0)
        for lid, (lo, hi) in enumerate(h.leaf_ranges()):
            assert np.all(new_leaf[lo:hi] == lid)

    def test_reorder_preserves_graph(self, rng):
        g = generate_sbm(300, 5, 0.1, 0.01, seed=5)
        h = build_hierarchy(g, [5], seed=0)
        r = reorder(g, h)
        assert sorted(r.degrees.tolist()) == sorted(g.degrees.tolist())
        back = relabel(r, h.inverse)
        assert np.array_equal(back.neighbors, g.neighbors)
        assert np.array_equal(h.permutation[h.inverse], np.arange(300))

    def test_identity_when_already_sorted(self):
        g = two_cliques(6)
        h = build_hierarchy(g, [2], seed=0)
        # blocks are already contiguous, order within each is kept
        new_order = h.inverse
        assert sorted(new_order[:6].tolist()) in ([*range(6)], [*range(6, 12)])
        assert np.all(np.diff(new_order[:6]) > 0)

    def test_too_many_leaves(self):
        with pytest.raises(ValueError):
            build_hierarchy(two_cliques(2), [3, 2])

    def test_stats(self):
        g = generate_sbm(200, 4, 0.1, 0.01, seed=0)
        s = hierarchy_stats(g, build_hierarchy(g, [2, 2]))
        assert [lv["parts"] for lv in s["levels"]] == [2, 4]
        assert s["levels"][0]["edge_cut"] <= s["levels"][1]["edge_cut"]


class TestPermuteLevel:
    def setup_method(self):
        self.g = from_edges(8, clique_edges([0, 1]) + clique_edges([2, 3]) + clique_edges([4, 5]) + clique_edges([6, 7]))
        self.h = build_hierarchy(self.g, [2, 2], seed=0)

    def blocks_in_new_order(self, perm, level):
        a = self.h.assignments[level]
        out = np.empty(8, dtype=np.int64)
        out[perm] = a
        # collapse runs
        return tuple(int(x) for i, x in enumerate(out) if i == 0 or out[i - 1] != x)

    def test_none(self):
        assert np.array_equal(permute_level(self.h, "none"), self.h.permutation)

    def test_first(self):
        seen = set()
        for seed in range(20):
            perm = permute_level(self.h, "first", seed)
            top = self.blocks_in_new_order(perm, 0)
            leaf = self.blocks_in_new_order(perm, 1)
            assert len(top) == 2 and len(leaf) == 4
            # leaves stay grouped and ordered under their parent
            assert all(leaf[2 * i] // 2 == leaf[2 * i + 1] // 2 == top[i] for i in range(2))
            assert all(leaf[2 * i] < leaf[2 * i + 1] for i in range(2))
            seen.add(top)
        assert seen == {(0, 1), (1, 0)}

    def test_second_reaches_all_orders(self):
        seen = set()
        for seed in range(400):
            perm = permute_level(self.h, "second", seed)
            seen.add(self.blocks_in_new_order(perm, 1))
        assert len(seen) == math.factorial(4)

    def test_within_block_order_kept(self):
        perm = permute_level(self.h, "second", 3)
        for leaf in range(4):
            nodes = np.flatnonzero(self.h.assignments[1] == leaf)
            assert np.all(np.diff(perm[nodes]) == 1)

    def test_insufficient_levels(self):
        h = build_hierarchy(self.g, [4], seed=0)
        with pytest.raises(ValueError):
            permute_level(h, "second")
        with pytest.raises(ValueError):
            permute_level(h, "third")
