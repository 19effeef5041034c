from itertools import combinations

import networkx as nx
import numpy as np
import pytest

from sisource.errors import ArgumentError, StructureError, UnreachableError
from sisource.graph import (
    Graph,
    RootedTree,
    bfs_distances,
    distance_matrix,
    infection_range,
    labels_to_ids,
    minimal_spanning_subtree,
    parse_edge_list,
    shortest_path_tree,
    subtree_heights,
    subtree_without_link,
)

from conftest import ids, random_connected, random_tree, to_nx


class TestGraph:
    def test_adjacency_symmetric_and_sorted(self, rng):
        g = random_connected(rng, 15, 10)
        for u in g.nodes:
            assert list(g.neighbors(u)) == sorted(g.neighbors(u))
            for w in g.neighbors(u):
                assert u in g.neighbors(w)
                assert g.has_edge(u, w) and g.has_edge(w, u)

    def test_duplicates_merge(self):
        g = Graph(3, [(0, 1), (1, 0), (1, 2)])
        assert g.num_edges == 2

    def test_self_loop_rejected(self):
        with pytest.raises(StructureError):
            Graph(2, [(1, 1)])

    def test_edge_outside_node_set(self):
        with pytest.raises(ArgumentError):
            Graph(3, [(0, 1), (1, 2)], nodes=[0, 1])

    def test_subgraph_keeps_ids(self):
        g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        sub = g.subgraph([1, 2, 3])
        assert sub.nodes == (1, 2, 3)
        assert sub.edges == ((1, 2), (2, 3))
        assert 0 not in sub

    def test_is_tree(self):
        assert Graph(3, [(0, 1), (1, 2)]).is_tree()
        assert not Graph(3, [(0, 1), (1, 2), (0, 2)]).is_tree()
        assert not Graph(4, [(0, 1), (2, 3)]).is_tree()


class TestEdgeList:
    def test_labels_comments_duplicates_self_loops(self):
        text = ["# header", "a b", "b c", "", "c b", "d d", "c   e  extra"]
        g, stats = parse_edge_list(text)
        assert [g.label(u) for u in g.nodes] == ["a", "b", "c", "d", "e"]
        assert stats.duplicates == 1
        assert stats.self_loops == 1
        assert stats.edges == 3
        assert g.degree(3) == 0

    def test_malformed_line(self):
        with pytest.raises(ArgumentError, match="line 2"):
            parse_edge_list(["a b", "lonely"])

    def test_label_lookup(self, fig2):
        assert labels_to_ids(fig2, ["v4", "v1"]) == [3, 0]
        with pytest.raises(ArgumentError):
            labels_to_ids(fig2, ["v11"])


class TestDistances:
    def test_fig2_hops(self, fig2):
        v1, v2, v7 = ids(fig2, "v1", "v2", "v7")
        d = bfs_distances(fig2, v1)
        assert d[v1] == 0
        assert d[v2] == 1
        assert d[v7] == 2

    def test_invalid_source(self, fig2):
        with pytest.raises(ArgumentError):
            bfs_distances(fig2, 99)

    def test_unreachable_is_inf(self):
        d = bfs_distances(Graph(3, [(0, 1)]), 0)
        assert d[2] == float("inf")

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_floyd_warshall(self, seed):
        rng = np.random.default_rng(seed)
        g = random_tree(rng, 10)
        fw = nx.floyd_warshall(to_nx(g))
        for v in g.nodes:
            d = bfs_distances(g, v)
            assert all(d[u] == fw[v][u] for u in g.nodes)

    @pytest.mark.parametrize("k", [3, 40])
    def test_distance_matrix_batched_and_scipy_agree(self, rng, k):
        # k >= 32 takes the level-synchronous path
        g = random_connected(rng, 60, 30)
        src = sorted(int(x) for x in rng.choice(60, size=k, replace=False))
        dm = distance_matrix(g, src)
        for row, s in zip(dm, src):
            assert list(row) == [bfs_distances(g, s)[u] for u in range(g.n)]

    def test_distance_matrix_deep_graph_falls_back(self):
        n = 200
        g = Graph(n, [(i, i + 1) for i in range(n - 1)])
        dm = distance_matrix(g, list(range(40)))
        assert dm[0, n - 1] == n - 1

    def test_distance_matrix_disconnected(self):
        g = Graph(4, [(0, 1), (2, 3)])
        dm = distance_matrix(g, list(range(4)) * 10)
        assert np.isinf(dm[0, 2])

    def test_tree_levels_are_bipartite(self, rng):
        g = random_tree(rng, 25)
        for v in (0, 7, 24):
            d = bfs_distances(g, v)
            assert all(abs(d[a] - d[b]) == 1 for a, b in g.edges)


class TestInfectionRange:
    def test_fig2(self, fig2):
        v1, v2, v3 = ids(fig2, "v1", "v2", "v3")
        assert infection_range(fig2, v1, {v2, v3}) == 1

    def test_self(self, fig2):
        assert infection_range(fig2, 4, {4}) == 0

    def test_path(self):
        g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        assert infection_range(g, 0, {2, 4}) == 4

    def test_errors(self):
        g = Graph(3, [(0, 1)])
        with pytest.raises(ArgumentError):
            infection_range(g, 0, set())
        with pytest.raises(UnreachableError):
            infection_range(g, 0, {2})


def _min_connected_superset(g, marks):
    """Smallest connected vertex set containing ``marks``, by enumeration."""
    nxg = to_nx(g)
    rest = [u for u in g.nodes if u not in marks]
    for extra in range(len(rest) + 1):
        for add in combinations(rest, extra):
            s = set(marks) | set(add)
            if nx.is_connected(nxg.subgraph(s)):
                return s
    raise AssertionError


class TestMinimalSubtree:
    def test_fig2(self, fig2):
        v1, v2, v3 = ids(fig2, "v1", "v2", "v3")
        h = minimal_spanning_subtree(fig2, {v2, v3})
        assert set(h.nodes) == {v1, v2, v3}
        assert set(h.edges) == {(v1, v2), (v1, v3)}

    def test_single(self, fig2):
        h = minimal_spanning_subtree(fig2, {5})
        assert h.nodes == (5,) and h.num_edges == 0

    def test_needs_tree(self):
        with pytest.raises(StructureError):
            minimal_spanning_subtree(Graph(3, [(0, 1), (1, 2), (0, 2)]), {0})

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        g = random_tree(rng, 12)
        marks = {int(x) for x in rng.choice(12, size=4, replace=False)}
        h = minimal_spanning_subtree(g, marks)
        assert set(h.nodes) == _min_connected_superset(g, marks)
        assert h.is_tree()
        assert all(u in marks for u in h.nodes if h.degree(u) <= 1)


class TestRootedTree:
    def test_heights_fig2(self, fig2):
        v1, v2, v5 = ids(fig2, "v1", "v2", "v5")
        D = subtree_heights(RootedTree.from_graph(fig2, v1))
        assert D[v2] == 1 and D[v5] == 0 and D[v1] == 2

    def test_single_node(self):
        assert subtree_heights(RootedTree(3, {3: None})) == {3: 0}

    @pytest.mark.parametrize("seed", range(8))
    def test_heights_are_eccentricity_within_descendants(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 13))
        g = random_tree(rng, n)
        t = RootedTree.from_graph(g, int(rng.integers(n)))
        D = subtree_heights(t)
        for u in t.nodes:
            sub = g.subgraph(t.descendants(u))
            assert D[u] == max(bfs_distances(sub, u)[w] for w in sub.nodes)

    def test_validate_rejects_cycle(self):
        t = RootedTree(0, {0: None, 1: 2, 2: 1})
        with pytest.raises(StructureError):
            t.validate()

    def test_shortest_path_tree_lowest_id_parent(self):
        g = Graph(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
        assert shortest_path_tree(g, 0).parent[3] == 1


class TestSubtreeWithoutLink:
    def test_fig2(self, fig2):
        v1, v4, v9, v10 = ids(fig2, "v1", "v4", "v9", "v10")
        assert subtree_without_link(fig2, v4, v1) == {v4, v9, v10}

    def test_adjacent_leaf(self, fig2):
        assert subtree_without_link(fig2, 4, 1) == {4}

    def test_disconnected(self):
        with pytest.raises(StructureError):
            subtree_without_link(Graph(4, [(0, 1), (2, 3)]), 0, 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_partition(self, seed):
        rng = np.random.default_rng(seed)
        g = random_tree(rng, 15)
        u, v = (int(x) for x in rng.choice(15, size=2, replace=False))
        a = subtree_without_link(g, u, v)
        b = subtree_without_link(g, v, u)
        assert not a & b
        assert len(a) + len(b) <= len(g)
        if g.has_edge(u, v):
            assert a | b == g.node_set
