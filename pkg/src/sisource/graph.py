"""Undirected graphs with the distance and subtree primitives the estimators use.

Node ids are dense integers ``0..n-1``; string labels from input files live in
``Graph.labels``. Sub-structures (spanning subtrees, candidate subgraphs) keep
the id space of the graph they were cut from, so an id means the same node
everywhere.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import ArgumentError, StructureError, UnreachableError

log = logging.getLogger(__name__)

INF = math.inf


class Graph:
    """Immutable undirected simple graph.

    ``n`` is the size of the id space. ``nodes`` defaults to every id in it;
    a subgraph passes the subset it actually contains.
    """

    def __init__(
        self,
        n: int,
        edges: Iterable[tuple[int, int]],
        nodes: Iterable[int] | None = None,
        labels: Sequence[str] | None = None,
    ):
        self.n = int(n)
        node_set = frozenset(range(self.n)) if nodes is None else frozenset(nodes)
        for u in node_set:
            if not 0 <= u < self.n:
                raise ArgumentError(f"node id {u} outside 0..{self.n - 1}")
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for a, b in edges:
            if a == b:
                raise StructureError(f"self-loop on node {a}")
            if a not in node_set or b not in node_set:
                raise ArgumentError(f"edge ({a}, {b}) references a node outside the graph")
            adj[a].add(b)
            adj[b].add(a)
        self._adj = tuple(tuple(sorted(s)) for s in adj)
        self._nodes = node_set
        self.labels = list(labels) if labels is not None else None

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, u) -> bool:
        return u in self._nodes

    def __repr__(self) -> str:
        return f"Graph(nodes={len(self)}, edges={self.num_edges})"

    @cached_property
    def nodes(self) -> tuple[int, ...]:
        return tuple(sorted(self._nodes))

    @property
    def node_set(self) -> frozenset[int]:
        return self._nodes

    def neighbors(self, u: int) -> tuple[int, ...]:
        """Neighbors of ``u`` in ascending id order."""
        return self._adj[u]

    def degree(self, u: int) -> int:
        return len(self._adj[u])

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple((a, b) for a in self.nodes for b in self._adj[a] if a < b)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def has_edge(self, a: int, b: int) -> bool:
        adj = self._adj[a]
        i = bisect_left(adj, b)
        return i < len(adj) and adj[i] == b

    def label(self, u: int) -> str:
        return self.labels[u] if self.labels is not None else str(u)

    def check_node(self, u) -> int:
        if not isinstance(u, (int, np.integer)) or u not in self._nodes:
            raise ArgumentError(f"invalid node id {u!r}")
        return int(u)

    def component(self, u: int) -> frozenset[int]:
        seen = {u}
        queue = deque([u])
        while queue:
            x = queue.popleft()
            for y in self._adj[x]:
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        return frozenset(seen)

    def is_connected(self) -> bool:
        if not self._nodes:
            return True
        return len(self.component(self.nodes[0])) == len(self)

    def is_tree(self) -> bool:
        return self._is_tree

    @cached_property
    def _is_tree(self) -> bool:
        return len(self) > 0 and self.num_edges == len(self) - 1 and self.is_connected()

    def subgraph(self, nodes: Iterable[int]) -> "Graph":
        """Induced subgraph, same id space."""
        keep = frozenset(nodes)
        edges = [(a, b) for a, b in self.edges if a in keep and b in keep]
        return Graph(self.n, edges, nodes=keep, labels=self.labels)

    def edge_subgraph(self, nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> "Graph":
        return Graph(self.n, edges, nodes=nodes, labels=self.labels)

    @cached_property
    def csr(self) -> csr_matrix:
        """Adjacency as a sparse matrix over the full id space."""
        rows = [a for a in range(self.n) for _ in self._adj[a]]
        cols = [b for a in range(self.n) for b in self._adj[a]]
        data = np.ones(len(rows), dtype=np.float64)
        return csr_matrix((data, (rows, cols)), shape=(self.n, self.n))


@dataclass(frozen=True)
class DistanceMap:
    source: int
    dist: tuple  # per id; INF when unreachable or not in the graph

    def __getitem__(self, u: int):
        return self.dist[u]


@dataclass
class RootedTree:
    """A tree with edges oriented towards ``root``."""

    root: int
    parent: dict[int, int | None]
    children: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.children:
            kids: dict[int, list[int]] = {u: [] for u in self.parent}
            for u, pa in self.parent.items():
                if pa is not None:
                    kids[pa].append(u)
            self.children = {u: tuple(sorted(c)) for u, c in kids.items()}

    @classmethod
    def from_graph(cls, g: Graph, root: int) -> "RootedTree":
        """Orient a tree graph towards ``root``."""
        if not g.is_tree():
            raise StructureError("graph is not a tree")
        root = g.check_node(root)
        parent: dict[int, int | None] = {root: None}
        queue = deque([root])
        while queue:
            x = queue.popleft()
            for y in g.neighbors(x):
                if y not in parent:
                    parent[y] = x
                    queue.append(y)
        return cls(root, parent)

    def __len__(self) -> int:
        return len(self.parent)

    def __contains__(self, u) -> bool:
        return u in self.parent

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(sorted(self.parent))

    def edges(self) -> list[tuple[int, int]]:
        return sorted((min(u, pa), max(u, pa)) for u, pa in self.parent.items() if pa is not None)

    def bfs_order(self) -> list[int]:
        order = [self.root]
        i = 0
        while i < len(order):
            order.extend(self.children[order[i]])
            i += 1
        return order

    def postorder(self) -> list[int]:
        return self.bfs_order()[::-1]

    def depth(self) -> dict[int, int]:
        depth = {self.root: 0}
        for u in self.bfs_order()[1:]:
            depth[u] = depth[self.parent[u]] + 1
        return depth

    def descendants(self, u: int) -> list[int]:
        out = [u]
        i = 0
        while i < len(out):
            out.extend(self.children[out[i]])
            i += 1
        return out

    def leaves(self) -> list[int]:
        return [u for u in self.nodes if not self.children[u]]

    def as_graph(self, n: int, labels=None) -> Graph:
        return Graph(n, self.edges(), nodes=self.parent, labels=labels)

    def validate(self) -> None:
        roots = [u for u, pa in self.parent.items() if pa is None]
        if roots != [self.root]:
            raise StructureError(f"expected a single root {self.root}, found {roots}")
        for u, pa in self.parent.items():
            if pa is not None and u not in self.children.get(pa, ()):
                raise StructureError(f"parent/children mismatch at {u}")
        if len(self.bfs_order()) != len(self.parent):
            raise StructureError("tree is cyclic or disconnected")


def _bfs(g: Graph, v: int):
    """BFS visiting neighbors in ascending id order; returns (order, dist, parent)."""
    dist = {v: 0}
    parent: dict[int, int | None] = {v: None}
    order = [v]
    i = 0
    while i < len(order):
        x = order[i]
        i += 1
        dx = dist[x] + 1
        for y in g.neighbors(x):
            if y not in dist:
                dist[y] = dx
                parent[y] = x
                order.append(y)
    return order, dist, parent


def bfs_distances(g: Graph, v: int) -> DistanceMap:
    v = g.check_node(v)
    _, dist, _ = _bfs(g, v)
    return DistanceMap(v, tuple(dist.get(u, INF) for u in range(g.n)))


def shortest_path_tree(g: Graph, v: int) -> RootedTree:
    """Deterministic BFS tree of the component of ``v`` (lowest-id parent wins)."""
    v = g.check_node(v)
    _, _, parent = _bfs(g, v)
    return RootedTree(v, parent)


def _check_ve(g: Graph, ve) -> list[int]:
    ve = sorted(set(ve))
    if not ve:
        raise ArgumentError("explicit node set is empty")
    for u in ve:
        g.check_node(u)
    return ve


def infection_range(g: Graph, v: int, ve) -> int:
    """Largest hop distance from ``v`` to an explicit node."""
    ve = _check_ve(g, ve)
    dist = bfs_distances(g, v)
    worst = max(dist[u] for u in ve)
    if worst == INF:
        raise UnreachableError(f"an explicit node is unreachable from {v}")
    return int(worst)


_BATCH_MIN_SOURCES = 32
_BATCH_MAX_LEVELS = 64


def distance_matrix(g: Graph, sources: Sequence[int]) -> np.ndarray:
    """Hop distances from each source to every id (rows follow ``sources``)."""
    sources = list(sources)
    if not sources:
        return np.empty((0, g.n))
    if len(sources) >= _BATCH_MIN_SOURCES:
        dist = _batched_bfs(g, sources)
        if dist is not None:
            return dist
    return shortest_path(g.csr, method="D", unweighted=True, directed=False, indices=sources)


def _batched_bfs(g: Graph, sources: list[int]) -> np.ndarray | None:
    """All sources at once, one sparse product per level; None on deep graphs."""
    k = len(sources)
    cols = np.arange(k)
    dist = np.full((g.n, k), np.inf)
    dist[sources, cols] = 0
    front = np.zeros((g.n, k), dtype=np.float32)
    front[sources, cols] = 1
    adj = g.csr.astype(np.float32)
    for level in range(1, _BATCH_MAX_LEVELS + 1):
        new = ((adj @ front) > 0) & np.isinf(dist)
        if not new.any():
            return np.ascontiguousarray(dist.T)
        dist[new] = level
        front = new.astype(np.float32)
    return None


def minimal_spanning_subtree(g: Graph, nodes) -> Graph:
    """Smallest connected subtree of a tree graph containing ``nodes``."""
    keep = set(nodes)
    if not keep:
        raise ArgumentError("node set is empty")
    for u in keep:
        g.check_node(u)
    if not g.is_tree():
        raise StructureError("minimal spanning subtree needs a tree graph")
    deg = {u: g.degree(u) for u in g.nodes}
    alive = set(g.nodes)
    stack = [u for u in g.nodes if deg[u] <= 1 and u not in keep]
    while stack:
        u = stack.pop()
        if u not in alive:
            continue
        alive.discard(u)
        for w in g.neighbors(u):
            if w in alive:
                deg[w] -= 1
                if deg[w] <= 1 and w not in keep:
                    stack.append(w)
    return g.subgraph(alive)


def subtree_heights(t: RootedTree) -> dict[int, int]:
    heights: dict[int, int] = {}
    for u in t.postorder():
        kids = t.children[u]
        heights[u] = 1 + max(heights[c] for c in kids) if kids else 0
    return heights


def subtree_without_link(g: Graph, u: int, v: int) -> frozenset[int]:
    """Nodes on ``u``'s side after cutting the first edge of the u->v path."""
    u, v = g.check_node(u), g.check_node(v)
    if u == v:
        raise ArgumentError("u and v must differ")
    if g.num_edges != len(g) - len(_components(g)):
        raise StructureError("subtree_without_link needs a tree (or forest)")
    _, _, parent = _bfs(g, v)
    if u not in parent:
        raise StructureError(f"{u} and {v} are disconnected")
    toward = parent[u]
    seen = {u}
    queue = deque([u])
    while queue:
        x = queue.popleft()
        for y in g.neighbors(x):
            if y not in seen and not (x == u and y == toward):
                seen.add(y)
                queue.append(y)
    return frozenset(seen)


def _components(g: Graph) -> list[frozenset[int]]:
    seen: set[int] = set()
    comps = []
    for u in g.nodes:
        if u not in seen:
            c = g.component(u)
            seen |= c
            comps.append(c)
    return comps


@dataclass
class EdgeListStats:
    lines: int = 0
    edges: int = 0
    duplicates: int = 0
    self_loops: int = 0


def parse_edge_list(lines: Iterable[str]) -> tuple[Graph, EdgeListStats]:
    """Build a graph from whitespace-separated label pairs.

    Ids are assigned in order of first appearance. Self-loops are dropped and
    counted; duplicate edges are merged.
    """
    ids: dict[str, int] = {}
    edges: set[tuple[int, int]] = set()
    stats = EdgeListStats()

    def node(label: str) -> int:
        if label not in ids:
            ids[label] = len(ids)
        return ids[label]

    for lineno, raw in enumerate(lines, 1):
        stats.lines += 1
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ArgumentError(f"line {lineno}: expected two node labels, got {line!r}")
        a, b = node(parts[0]), node(parts[1])
        if a == b:
            stats.self_loops += 1
            continue
        e = (min(a, b), max(a, b))
        if e in edges:
            stats.duplicates += 1
        edges.add(e)
    if stats.self_loops:
        log.warning("dropped %d self-loop(s)", stats.self_loops)
    stats.edges = len(edges)
    labels = sorted(ids, key=ids.get)
    return Graph(len(ids), sorted(edges), labels=labels), stats


def read_edge_list(path: str | Path) -> tuple[Graph, EdgeListStats]:
    with open(path, encoding="utf-8") as fh:
        return parse_edge_list(fh)


def labels_to_ids(g: Graph, labels: Iterable[str]) -> list[int]:
    table = {lab: i for i, lab in enumerate(g.labels)} if g.labels is not None else None
    out = []
    for lab in labels:
        if table is None:
            try:
                out.append(g.check_node(int(lab)))
            except ValueError:
                raise ArgumentError(f"unknown node label {lab!r}") from None
        elif lab in table:
            out.append(table[lab])
        else:
            raise ArgumentError(f"unknown node label {lab!r}")
    return out
