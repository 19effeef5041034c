"""Approximate source estimation on general graphs.

For each candidate source ``v`` we build ``H_v`` (a shortest-path tree from
``v`` to every explicit node plus all graph edges touching it), pick a
spanning tree of ``H_v`` with small height-difference sum

    F(T) = sum over non-root u of height(parent(u)) - height(u),

and score the resulting infection tree with its closed-form most-likely-path
probability. Reverse Greedy is the fast heuristic; the spanning-tree
enumerator and the MIQCQP export are the exact references.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from itertools import product
from typing import Callable, Iterator

from .errors import ArgumentError, ScaleRefusal, UnreachableError
from .estimate import SourceEstimate, argbest
from .graph import Graph, RootedTree, _bfs, subtree_heights
from .si import SIParams
from .tree import infection_ranges


@dataclass
class CandidateSubgraph:
    center: int
    graph: Graph
    tiers: dict[int, int]  # hop distance from the center in the full graph
    spt_nodes: frozenset[int]

    def __len__(self) -> int:
        return len(self.graph)


@dataclass
class InfectionTree:
    tree: RootedTree
    D: dict[int, int]  # subtree heights
    U: dict[int, int]  # depth below the root

    @classmethod
    def from_rooted(cls, tree: RootedTree) -> "InfectionTree":
        return cls(tree, subtree_heights(tree), tree.depth())

    @classmethod
    def from_parents(cls, root: int, parent: dict[int, int | None]) -> "InfectionTree":
        return cls.from_rooted(RootedTree(root, dict(parent)))

    @property
    def root(self) -> int:
        return self.tree.root

    @property
    def nodes(self) -> tuple[int, ...]:
        return self.tree.nodes

    def __len__(self) -> int:
        return len(self.tree)

    def non_explicit_leaves(self, ve) -> list[int]:
        return [u for u in self.tree.leaves() if u != self.root and u not in ve]


def build_candidate_subgraph(g: Graph, v: int, ve) -> CandidateSubgraph:
    v = g.check_node(v)
    ve = sorted(set(ve))
    if not ve:
        raise ArgumentError("explicit node set is empty")
    _, dist, parent = _bfs(g, v)
    spt: set[int] = {v}
    for u in ve:
        if u not in dist:
            raise UnreachableError(f"explicit node {u} unreachable from {v}")
        while u not in spt:
            spt.add(u)
            u = parent[u]
    nodes = set(spt)
    edges = set()
    for u in spt:
        for w in g.neighbors(u):
            nodes.add(w)
            edges.add((min(u, w), max(u, w)))
    h = g.edge_subgraph(nodes, sorted(edges))
    return CandidateSubgraph(v, h, {u: dist[u] for u in nodes}, frozenset(spt))


def objective_f(t: InfectionTree) -> int:
    """Sum of height drops along every tree edge."""
    return sum(t.D[pa] - t.D[u] for u, pa in t.tree.parent.items() if pa is not None)


def objective_f_degree(t: InfectionTree) -> int:
    """The same quantity written as sum (deg(u) - 2) * height(u) + 2 * height(root)."""
    tree = t.tree
    total = 2 * t.D[tree.root]
    for u in tree.parent:
        deg = len(tree.children[u]) + (tree.parent[u] is not None)
        total += (deg - 2) * t.D[u]
    return total


def tree_log_likelihood(t: InfectionTree, ve, params: SIParams) -> float:
    """Log-probability of the most likely path tracing out ``t``.

    p^(|T|-1) (1-p)^(F - |T| + 1) prod_{V_e} q_u prod_{T \\ V_e} (1 - q_u);
    factors of nodes outside the tree are not part of it.
    """
    ve = frozenset(ve)
    missing = ve - set(t.tree.parent)
    if missing:
        raise ArgumentError(f"explicit node(s) {sorted(missing)} absent from the infection tree")
    n = len(t)
    p = params.p
    waits = objective_f(t) - n + 1
    total = 0.0
    if n > 1:
        total += (n - 1) * math.log(p)
    if waits:
        total += waits * math.log1p(-p)
    for u in t.tree.parent:
        w = params.q[u] if u in ve else 1 - params.q[u]
        total += math.log(w) if w > 0 else -math.inf
    return total


def tree_likelihood_exact(t: InfectionTree, ve, params: SIParams) -> Fraction:
    ex = params.exact()
    n = len(t)
    prob = ex.p ** (n - 1) * (1 - ex.p) ** (objective_f(t) - n + 1)
    for u in t.tree.parent:
        prob *= ex.q[u] if u in ve else 1 - ex.q[u]
    return prob


def prune_unobserved_leaves(t: InfectionTree, ve) -> InfectionTree:
    """Drop non-explicit non-root leaves until every non-root leaf is explicit."""
    ve = frozenset(ve)
    parent = dict(t.tree.parent)
    nkids = {u: len(t.tree.children[u]) for u in parent}
    stack = [u for u in parent if nkids[u] == 0 and u != t.root and u not in ve]
    while stack:
        u = stack.pop()
        pa = parent.pop(u)
        nkids[pa] -= 1
        if nkids[pa] == 0 and pa != t.root and pa not in ve:
            stack.append(pa)
    return InfectionTree.from_parents(t.root, parent)


# ---------------------------------------------------------------------------
# Reverse Greedy


class _ReverseGreedy:
    def __init__(self, h: CandidateSubgraph):
        self.h = h
        g = h.graph
        v = h.center
        _, dist, parent = _bfs(g, v)
        self.root = v
        self.parent: dict[int, int | None] = parent
        self.children: dict[int, set[int]] = {u: set() for u in parent}
        for u, pa in parent.items():
            if pa is not None:
                self.children[pa].add(u)
        self.U = dict(dist)
        init = InfectionTree.from_parents(v, parent)
        self.D = dict(init.D)

    def _is_descendant(self, y: int, x: int) -> bool:
        while y is not None:
            if y == x:
                return True
            y = self.parent[y]
        return False

    def _height_without(self, y: int, x: int) -> int:
        return max((self.D[c] + 1 for c in self.children[y] if c != x), default=0)

    def _subtree(self, x: int) -> list[int]:
        out = [x]
        i = 0
        while i < len(out):
            out.extend(self.children[out[i]])
            i += 1
        return out

    def choose(self, x: int) -> int:
        top = self.D[self.root]
        best_key, best_y = None, None
        for y in self.h.graph.neighbors(x):
            if self.U[y] > top - self.D[x] - 1 or self._is_descendant(y, x):
                continue
            d_prime = self._height_without(y, x) if y == self.parent[x] else self.D[y]
            key = (self.U[y], d_prime, -y)
            if best_key is None or key > best_key:
                best_key, best_y = key, y
        if best_y is None:
            raise AssertionError(f"no admissible parent for node {x}")
        return best_y

    def move(self, x: int, y: int) -> None:
        old = self.parent[x]
        if y == old:
            return
        self.children[old].discard(x)
        self.children[y].add(x)
        self.parent[x] = y
        shift = self.U[y] + 1 - self.U[x]
        if shift:
            for z in self._subtree(x):
                self.U[z] += shift
        # heights on the old branch can only drop
        w = old
        while w is not None:
            new = self._height_without(w, None)
            if new == self.D[w]:
                break
            self.D[w] = new
            w = self.parent[w]
        # heights on the new branch can only grow
        child, w = x, y
        while w is not None and self.D[w] < self.D[child] + 1:
            self.D[w] = self.D[child] + 1
            child, w = w, self.parent[w]

    def run(self, audit: Callable | None = None) -> InfectionTree:
        top = self.D[self.root]
        for d in range(top, 0, -1):
            layer = sorted((u for u in self.U if self.U[u] == d), key=lambda u: (self.D[u], u))
            for x in layer:
                y = self.choose(x)
                self.move(x, y)
                if audit is not None:
                    audit(self.root, self.parent, self.U, self.D)
        return InfectionTree(RootedTree(self.root, dict(self.parent)), dict(self.D), dict(self.U))


def reverse_greedy(h: CandidateSubgraph, audit: Callable | None = None) -> InfectionTree:
    """Reshape the BFS tree of ``H_v`` so that deep nodes carry the branching.

    Layers are processed from the deepest up; each node is re-hung under
    the admissible neighbor of greatest depth (ties: larger height without
    the node, then lower id). ``audit(root, parent, U, D)`` is called after
    every reattachment.
    """
    return _ReverseGreedy(h).run(audit)


# ---------------------------------------------------------------------------
# Spanning-tree oracle


def spanning_tree_count(g: Graph) -> int:
    """Number of spanning trees (Kirchhoff), exact via fraction-free elimination."""
    nodes = g.nodes
    n = len(nodes)
    if n <= 1:
        return 1
    idx = {u: i for i, u in enumerate(nodes)}
    lap = [[0] * n for _ in range(n)]
    for a, b in g.edges:
        i, j = idx[a], idx[b]
        lap[i][i] += 1
        lap[j][j] += 1
        lap[i][j] -= 1
        lap[j][i] -= 1
    m = [row[1:] for row in lap[1:]]
    size = n - 1
    sign, prev = 1, 1
    for k in range(size - 1):
        if m[k][k] == 0:
            swap = next((r for r in range(k + 1, size) if m[r][k] != 0), None)
            if swap is None:
                return 0
            m[k], m[swap] = m[swap], m[k]
            sign = -sign
        for i in range(k + 1, size):
            for j in range(k + 1, size):
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) // prev
        prev = m[k][k]
    return sign * m[size - 1][size - 1]


def enumerate_spanning_trees(g: Graph) -> Iterator[list[tuple[int, int]]]:
    """Yield the edge list of every spanning tree of a connected graph."""
    nodes = g.nodes
    edges = list(g.edges)
    need = len(nodes) - 1
    if need <= 0:
        yield []
        return

    parent = {u: u for u in nodes}

    def find(u):
        while parent[u] != u:
            u = parent[u]
        return u

    chosen: list[tuple[int, int]] = []

    def rec(i: int, comps: int):
        if len(chosen) == need:
            yield list(chosen)
            return
        if len(edges) - i < need - len(chosen):
            return
        a, b = edges[i]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra
            chosen.append((a, b))
            yield from rec(i + 1, comps - 1)
            chosen.pop()
            parent[rb] = rb
        # exclude edge i only if the rest can still connect everything
        if _connectable(nodes, chosen, edges[i + 1 :]):
            yield from rec(i + 1, comps)

    yield from rec(0, len(nodes))


def _connectable(nodes, chosen, rest) -> bool:
    adj: dict[int, list[int]] = {u: [] for u in nodes}
    for a, b in list(chosen) + list(rest):
        adj[a].append(b)
        adj[b].append(a)
    start = nodes[0]
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(nodes)


def _tree_from_edges(root: int, nodes, edges) -> InfectionTree:
    adj: dict[int, list[int]] = {u: [] for u in nodes}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    parent: dict[int, int | None] = {root: None}
    order = [root]
    for x in order:
        for y in sorted(adj[x]):
            if y not in parent:
                parent[y] = x
                order.append(y)
    return InfectionTree.from_parents(root, parent)


SPANNING_TREE_LIMIT = 100_000


def spanning_tree_minimum(h: CandidateSubgraph, limit: int = SPANNING_TREE_LIMIT) -> tuple[int, list[InfectionTree]]:
    """Exact minimum of F over all spanning trees of ``H_v`` and every minimizer."""
    count = spanning_tree_count(h.graph)
    if count > limit:
        raise ScaleRefusal(f"H_v has {count} spanning trees (limit {limit})")
    best, arg = None, []
    for edges in enumerate_spanning_trees(h.graph):
        t = _tree_from_edges(h.center, h.graph.nodes, edges)
        f = objective_f(t)
        if best is None or f < best:
            best, arg = f, [t]
        elif f == best:
            arg.append(t)
    return best, arg


def spanning_tree_oracle(h: CandidateSubgraph, limit: int = SPANNING_TREE_LIMIT) -> InfectionTree:
    """Spanning tree of ``H_v`` minimizing F (first in enumeration order on ties)."""
    return spanning_tree_minimum(h, limit)[1][0]


# ---------------------------------------------------------------------------
# MIQCQP export


MIQCQP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["center", "nodes", "directed_edges", "objective", "constraints", "bounds"],
    "properties": {
        "center": {"type": "integer"},
        "nodes": {"type": "array", "items": {"type": "integer"}},
        "directed_edges": {"$ref": "#/$defs/pairs"},
        "objective": {
            "type": "object",
            "additionalProperties": False,
            "required": ["bilinear", "linear"],
            "properties": {
                "bilinear": {"$ref": "#/$defs/pairs"},
                "linear": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["node", "coef"],
                        "properties": {"node": {"type": "integer"}, "coef": {"type": "integer"}},
                    },
                },
            },
        },
        "constraints": {
            "type": "object",
            "additionalProperties": False,
            "required": ["incoming", "total_edges", "height_lb", "height_ub"],
            "properties": {
                "incoming": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["node", "rhs"],
                        "properties": {"node": {"type": "integer"}, "rhs": {"enum": [0, 1]}},
                    },
                },
                "total_edges": {"type": "integer"},
                "height_lb": {"$ref": "#/$defs/pairs"},
                "height_ub": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["node", "terms"],
                        "properties": {
                            "node": {"type": "integer"},
                            "terms": {
                                "type": "array",
                                "items": {"type": "array", "items": {"type": "integer"}, "minItems": 1, "maxItems": 1},
                            },
                        },
                    },
                },
            },
        },
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "required": ["D_max"],
            "properties": {"D_max": {"type": "integer"}},
        },
        "metadata": {"type": "object"},
    },
    "$defs": {
        "pairs": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        }
    },
}


@dataclass
class MiqcqpInstance:
    """Spanning-tree height program over ``H_v``.

    Variables: binary E[i,j] per directed edge (i is j's parent), integer
    0 <= D[i] <= D_max. Minimize sum E[i,j] D[i] - sum_{i != center} D[i] s.t.
      incoming:    sum_j E[j,i] = 0 for the center, 1 otherwise
      total_edges: sum E = |H_v| - 1
      height_lb:   D[i] >= (D[j] + 1) E[i,j]
      height_ub:   D[i] <= sum_j (D[j] + 1) E[i,j]
    """

    center: int
    nodes: list[int]
    directed_edges: list[list[int]]
    objective: dict = field(default_factory=dict)
    constraints: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    metadata: dict | None = None

    def to_json(self) -> dict:
        data = asdict(self)
        if data["metadata"] is None:
            del data["metadata"]
        return data

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> "MiqcqpInstance":
        import jsonschema

        jsonschema.validate(data, MIQCQP_SCHEMA)
        return cls(**data)

    @classmethod
    def loads(cls, text: str) -> "MiqcqpInstance":
        return cls.from_json(json.loads(text))


def export_miqcqp(h: CandidateSubgraph) -> MiqcqpInstance:
    g = h.graph
    v = h.center
    nodes = list(g.nodes)
    arcs = sorted([a, b] for x, y in g.edges for a, b in ((x, y), (y, x)))
    return MiqcqpInstance(
        center=v,
        nodes=nodes,
        directed_edges=arcs,
        objective={
            "bilinear": [list(a) for a in arcs],
            "linear": [{"node": i, "coef": -1} for i in nodes if i != v],
        },
        constraints={
            "incoming": [{"node": i, "rhs": 0 if i == v else 1} for i in nodes],
            "total_edges": len(nodes) - 1,
            "height_lb": [list(a) for a in arcs],
            "height_ub": [{"node": i, "terms": [[j] for j in g.neighbors(i)]} for i in nodes],
        },
        bounds={"D_max": len(nodes)},
    )


def miqcqp_objective(inst: MiqcqpInstance, E: set[tuple[int, int]], D: dict[int, int]) -> int:
    total = sum(D[i] for i, j in inst.objective["bilinear"] if (i, j) in E)
    total += sum(term["coef"] * D[term["node"]] for term in inst.objective["linear"])
    return total


def miqcqp_violations(inst: MiqcqpInstance, E: set[tuple[int, int]], D: dict[int, int]) -> list[str]:
    """Names of the constraint families an assignment breaks (empty if feasible)."""
    bad = []
    arcs = {tuple(a) for a in inst.directed_edges}
    if not E <= arcs:
        bad.append("integrality")
    for c in inst.constraints["incoming"]:
        if sum(1 for j, i in E if i == c["node"]) != c["rhs"]:
            bad.append("incoming")
            break
    if len(E) != inst.constraints["total_edges"]:
        bad.append("total_edges")
    if any(not 0 <= D[i] <= inst.bounds["D_max"] for i in inst.nodes):
        bad.append("bounds")
    for i, j in inst.constraints["height_lb"]:
        if D[i] < (D[j] + 1) * ((i, j) in E):
            bad.append("height_lb")
            break
    for c in inst.constraints["height_ub"]:
        i = c["node"]
        if D[i] > sum((D[j] + 1) * ((i, j) in E) for (j,) in c["terms"]):
            bad.append("height_ub")
            break
    return bad


@dataclass
class MiqcqpEnumeration:
    minimum: int
    argmin: list[tuple[frozenset, dict]]
    trees: int  # acyclic edge choices explored
    feasible: int  # feasible (E, D) pairs
    unpinned_trees: int  # trees admitting a D other than the true heights


def enumerate_miqcqp(inst: MiqcqpInstance) -> MiqcqpEnumeration:
    """Exhaustive search over every feasible (E, D) of a small instance.

    E ranges over all choices of one incoming arc per non-center node.
    Choices containing a cycle are infeasible (the height lower bounds
    sum to 0 >= cycle length). For acyclic choices every D within the
    bounds implied bottom-up by the height constraints is enumerated and
    checked against the constraint evaluator.
    """
    v = inst.center
    incoming: dict[int, list[int]] = {i: [] for i in inst.nodes}
    for i, j in inst.directed_edges:
        incoming[j].append(i)
    others = [i for i in inst.nodes if i != v]
    d_max = inst.bounds["D_max"]
    best, argmin = None, []
    trees = feasible = unpinned = 0
    for choice in product(*(incoming[i] for i in others)):
        parent = dict(zip(others, choice))
        if not _reaches_root(parent, v):
            continue
        trees += 1
        E = frozenset((pa, u) for u, pa in parent.items())
        kids: dict[int, list[int]] = {i: [] for i in inst.nodes}
        for u, pa in parent.items():
            kids[pa].append(u)
        order = _postorder(v, kids)
        heights = {}
        for u in order:
            heights[u] = max((heights[c] + 1 for c in kids[u]), default=0)
        pinned = True
        for D in _height_assignments(order, kids, d_max):
            if miqcqp_violations(inst, set(E), D):
                continue
            feasible += 1
            if D != heights:
                pinned = False
            obj = miqcqp_objective(inst, set(E), D)
            if best is None or obj < best:
                best, argmin = obj, [(E, dict(D))]
            elif obj == best:
                argmin.append((E, dict(D)))
        unpinned += not pinned
    return MiqcqpEnumeration(best, argmin, trees, feasible, unpinned)


def _reaches_root(parent: dict[int, int], root: int) -> bool:
    ok = {root}
    for u in parent:
        path = []
        x = u
        while x not in ok:
            if x in path:
                return False
            path.append(x)
            x = parent[x]
        ok.update(path)
    return True


def _postorder(root, kids) -> list[int]:
    order = [root]
    for x in order:
        order.extend(kids[x])
    return order[::-1]


def _height_assignments(order, kids, d_max) -> Iterator[dict[int, int]]:
    def rec(k: int, D: dict[int, int]):
        if k == len(order):
            yield dict(D)
            return
        u = order[k]
        lo = max((D[c] + 1 for c in kids[u]), default=0)
        hi = min(d_max, sum(D[c] + 1 for c in kids[u]))
        for val in range(lo, hi + 1):
            D[u] = val
            yield from rec(k + 1, D)
        D.pop(u, None)

    yield from rec(0, {})


# ---------------------------------------------------------------------------
# Estimator


def candidate_ball(g: Graph, ve, radius: int) -> list[int]:
    """Nodes within ``radius`` hops of a Jordan center of ``ve``."""
    ranges = infection_ranges(g, ve)
    centers = argbest(ranges, "min")
    out: set[int] = set()
    for c in centers:
        _, dist, _ = _bfs(g, c)
        out.update(u for u, d in dist.items() if d <= radius)
    return sorted(out)


def estimate_source_general(
    g: Graph,
    ve,
    params: SIParams,
    method: str = "rg",
    candidates=None,
    prune: bool = True,
    spanning_tree_limit: int = SPANNING_TREE_LIMIT,
) -> SourceEstimate:
    """Most likely infection-tree source over ``candidates`` (default: V_e's component)."""
    ve = sorted(set(ve))
    if not ve:
        raise ArgumentError("explicit node set is empty")
    for u in ve:
        g.check_node(u)
    comp = g.component(ve[0])
    if not set(ve) <= comp:
        raise UnreachableError("explicit nodes lie in different components")
    if candidates is None:
        candidates = sorted(comp)
    if method not in ("rg", "oracle"):
        raise ArgumentError(f"unknown method {method!r}")
    scores: dict[int, float] = {}
    objective: dict[int, int] = {}
    for v in candidates:
        if v not in comp:
            continue
        h = build_candidate_subgraph(g, v, ve)
        t = reverse_greedy(h) if method == "rg" else spanning_tree_oracle(h, spanning_tree_limit)
        objective[v] = objective_f(t)
        if prune:
            t = prune_unobserved_leaves(t, ve)
        scores[v] = tree_log_likelihood(t, ve, params)
    if not scores:
        raise ArgumentError("no candidate source in the explicit nodes' component")
    finite = {u: s for u, s in scores.items() if s > -math.inf}
    winners = argbest(finite, "max", tol=1e-9) if finite else sorted(scores)
    boundary = sorted(u for u in winners if g.degree(u) == 1)
    return SourceEstimate(
        method,
        winners,
        scores,
        extra={"objective": objective, "boundary_candidates": boundary},
    )
