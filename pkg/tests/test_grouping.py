import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpcgnet.grouping import (
    IndexSets,
    cluster_features,
    groups_from_labels,
    kmeans_groups,
    partition_graph,
)
from dpcgnet.problems import Grid2D, build_poisson_1d

from conftest import poisson2d


def check_partition(groups, n):
    allidx = np.concatenate(groups.sets)
    assert sorted(allidx.tolist()) == list(range(n))
    assert all(s.size > 0 for s in groups.sets)
    assert sum(groups.sizes) == n


class TestIndexSets:
    def test_rejects_overlap(self):
        with pytest.raises(ValueError, match="disjoint"):
            IndexSets([[0, 1], [1, 2]], 3)

    def test_rejects_empty_group(self):
        with pytest.raises(ValueError, match="non-empty"):
            IndexSets([[0, 1, 2], []], 3)

    def test_json_roundtrip(self):
        g = IndexSets([[2, 0], [1]], 3)
        h = IndexSets.from_json(g.to_json())
        assert [s.tolist() for s in h.sets] == [[0, 2], [1]]
        assert IndexSets.from_json("[[0], [1, 2]]").n_total == 3


class TestLabels:
    def test_direct(self):
        g = groups_from_labels([0, 0, 1, 1])
        assert [s.tolist() for s in g.sets] == [[0, 1], [2, 3]]

    def test_first_appearance_order(self):
        g = groups_from_labels([5, 2, 5, 2, 9])
        assert [s.tolist() for s in g.sets] == [[0, 2], [1, 3], [4]]

    def test_all_equal(self):
        g = groups_from_labels([3] * 7)
        assert len(g) == 1 and g.sets[0].tolist() == list(range(7))


class TestPartition:
    def test_chain(self):
        prob = build_poisson_1d(8)
        g = partition_graph(prob.A, prob.coords, 2)
        assert [s.tolist() for s in g.sets] == [[0, 1, 2, 3], [4, 5, 6, 7]]

    def test_single(self):
        A = poisson2d(5)
        g = partition_graph(A, Grid2D.unit_square(5).coords, 1)
        assert len(g) == 1

    def test_quadrants(self):
        grid = Grid2D.unit_square(16)
        g = partition_graph(poisson2d(16), grid.coords, 4)
        assert g.sizes == [64] * 4
        for s in g.sets:
            ix, iy = s % 16, s // 16
            assert ix.max() - ix.min() == 7 and iy.max() - iy.min() == 7
            assert ix.min() % 8 == 0 and iy.min() % 8 == 0

    def test_too_many(self):
        with pytest.raises(ValueError):
            partition_graph(poisson2d(2), Grid2D.unit_square(2).coords, 5)

    @settings(max_examples=25, deadline=None)
    @given(nx=st.integers(2, 20), S=st.integers(1, 16), seed=st.integers(0, 2**31))
    def test_balanced_cover_and_permutation_consistent(self, nx, S, seed):
        grid = Grid2D.unit_square(nx)
        n = grid.n
        S = min(S, n)
        coords = grid.coords
        g = partition_graph(None, coords, S)
        check_partition(g, n)
        if S & (S - 1) == 0:
            assert max(g.sizes) - min(g.sizes) <= int(np.log2(S)) + 1
        perm = np.random.default_rng(seed).permutation(n)
        gp = partition_graph(None, coords[perm], S)
        # relabelled nodes land in the same geometric pieces
        orig = sorted(sorted(s.tolist()) for s in g.sets)
        back = sorted(sorted(perm[s].tolist()) for s in gp.sets)
        assert orig == back
        assert [s.tolist() for s in partition_graph(None, coords, S).sets] == [s.tolist() for s in g.sets]


class TestKMeans:
    def test_separated_blobs(self, rng):
        X = np.concatenate([rng.normal(0.0, 0.01, 50), rng.normal(10.0, 0.01, 50)])
        g = kmeans_groups(X, 2, seed=0)
        assert [s.tolist() for s in g.sets] == [list(range(50)), list(range(50, 100))]

    def test_single(self, rng):
        g = kmeans_groups(rng.standard_normal(20), 1)
        assert len(g) == 1

    def test_deterministic(self, rng):
        X = rng.standard_normal((200, 3))
        a = kmeans_groups(X, 5, seed=9)
        b = kmeans_groups(X, 5, seed=9)
        assert [s.tolist() for s in a.sets] == [s.tolist() for s in b.sets]

    def test_too_many_clusters(self):
        with pytest.raises(ValueError, match="distinct"):
            kmeans_groups(np.array([1.0, 1.0, 2.0]), 3)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(10, 150), S=st.integers(1, 6), d=st.integers(1, 3),
           seed=st.integers(0, 2**31))
    def test_lloyd_fixed_point(self, n, S, d, seed):
        X = np.random.default_rng(seed).standard_normal((n, d))
        g = kmeans_groups(X, S, seed=seed)
        check_partition(g, n)
        C = np.array([X[s].mean(axis=0) for s in g.sets])
        dist = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        lab = g.labels()
        own = dist[np.arange(n), lab]
        assert np.all(own <= dist.min(axis=1) + 1e-12)

    def test_cluster_features(self):
        pred = np.array([0.0, 1.0, 2.0, 3.0])
        assert cluster_features(pred).shape == (4, 1)
        coords = np.column_stack([np.arange(4.0), np.zeros(4)])
        F = cluster_features(pred, coords, value_weight=0.5)
        assert F.shape == (4, 3)
        assert np.allclose(F[:, 0].std(), 0.5)
        assert np.allclose(F[:, 2], 0.0)
