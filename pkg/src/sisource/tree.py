"""Source estimation on trees: Jordan centers via two-pass message passing.

On a tree, the source of a most likely infection path consistent with the
explicit set is a Jordan center of that set (a node of minimum infection
range). ``jce`` finds one in O(|H|) messages; the exhaustive scan and the
path-probability brute force exist to check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, StructureError, UnreachableError
from .estimate import SourceEstimate, argbest
from .graph import Graph, distance_matrix, minimal_spanning_subtree
from .si import ORACLE_MAX_HORIZON, ORACLE_MAX_NODES, PathOracle, SIParams, check_oracle_scale


@dataclass
class JceMessages:
    """Per-node state of the message-passing run, indexed by node id."""

    root: int
    f: list[int]
    l1: list[int]
    l2: list[int]
    best_child: list[int]  # -1 for leaves
    g: dict[int, int]
    upward: int = 0
    downward: int = 0

    @property
    def count(self) -> int:
        return self.upward + self.downward


def _check_spanning(h: Graph, ve: frozenset[int]) -> None:
    if not h.is_tree():
        raise StructureError("tree method on general graph")
    if not ve <= h.node_set:
        raise ArgumentError("h does not contain every explicit node")
    if len(h) > 1:
        stray = [u for u in h.nodes if h.degree(u) == 1 and u not in ve]
        if stray:
            raise ArgumentError(f"h is not the minimal subtree spanning V_e (non-explicit leaves {stray[:5]})")


def jce_messages(h: Graph, ve, root: int | None = None) -> tuple[list[int], JceMessages | None]:
    """Run both passes; ``root`` defaults to the lowest-id non-leaf."""
    ve = frozenset(ve)
    if not ve:
        raise ArgumentError("explicit node set is empty")
    _check_spanning(h, ve)
    if len(h) <= 2:
        return list(h.nodes), None

    if root is None:
        root = next(u for u in h.nodes if h.degree(u) >= 2)
    elif h.degree(root) < 2:
        raise ArgumentError(f"root {root} is a leaf of h")

    # BFS order doubles as a reversed post-order
    parent = [-1] * h.n
    parent[root] = root
    order = [root]
    for x in order:
        for y in h.neighbors(x):
            if parent[y] < 0:
                parent[y] = x
                order.append(y)
    parent[root] = -1

    f = [0] * h.n
    l1 = [0] * h.n
    l2 = [0] * h.n
    best = [-1] * h.n
    for v in reversed(order):
        # lowest id wins ties: children arrive in ascending id order per parent
        if best[v] >= 0:
            f[v] = l1[v] + 1
        else:
            f[v] = 1
        pa = parent[v]
        if pa < 0:
            continue
        fv = f[v]
        b = best[pa]
        if b < 0 or fv > l1[pa] or (fv == l1[pa] and v < b):
            if b >= 0:
                l2[pa] = max(l2[pa], l1[pa])
            l1[pa], best[pa] = fv, v
        elif fv > l2[pa]:
            l2[pa] = fv
    msgs = JceMessages(root, f, l1, l2, best, {}, upward=len(order) - 1)

    v = root
    while True:
        if v != root:
            l2[v] = max(l2[v], msgs.g[v])
        if l1[v] - l2[v] <= 1:
            break
        nxt = best[v]
        msgs.g[nxt] = l2[v] + 1
        msgs.downward += 1
        v = nxt

    centers = [v]
    if l1[v] - l2[v] == 1:
        # the neighbor towards the longest branch has the same range
        centers.append(best[v])
    return centers, msgs


def jce(h: Graph, ve) -> SourceEstimate:
    """Jordan center of ``ve`` on its minimal spanning subtree ``h``."""
    centers, msgs = jce_messages(h, ve)
    if msgs is None:
        rng = len(h) - 1
        return SourceEstimate("jce", centers, {u: rng for u in centers}, direction="min", extra={"messages": 0})
    v = centers[0]
    rng = msgs.l1[v]
    return SourceEstimate(
        "jce",
        centers,
        {u: rng for u in centers},
        direction="min",
        extra={"messages": msgs.count, "root": msgs.root},
    )


def estimate_source_tree(g: Graph, ve) -> SourceEstimate:
    """Jordan center of ``ve`` on a tree graph ``g``."""
    if not g.is_tree():
        raise StructureError("tree method on general graph")
    ve = sorted(set(ve))
    if not ve:
        raise ArgumentError("explicit node set is empty")
    return jce(minimal_spanning_subtree(g, ve), ve)


def infection_ranges(g: Graph, ve, candidates=None) -> dict[int, float]:
    ve = sorted(set(ve))
    if not ve:
        raise ArgumentError("explicit node set is empty")
    for u in ve:
        g.check_node(u)
    dm = distance_matrix(g, ve)
    rng = dm.max(axis=0)
    if candidates is None:
        candidates = [u for u in g.nodes if np.isfinite(rng[u])]
        if not candidates:
            raise UnreachableError("explicit nodes lie in different components")
    return {u: float(rng[u]) for u in candidates}


def jordan_centers_exhaustive(g: Graph, ve) -> SourceEstimate:
    """Every node minimizing the infection range, by a full scan."""
    scores = infection_ranges(g, ve)
    return SourceEstimate("jordan-exhaustive", argbest(scores, "min"), scores, direction="min")


def brute_force_ml_path_source(
    g: Graph,
    ve,
    params: SIParams,
    t_max: int,
    max_nodes: int = ORACLE_MAX_NODES,
    max_horizon: int = ORACLE_MAX_HORIZON,
) -> SourceEstimate:
    """Source(s) of a most likely consistent path, over every source and t <= t_max.

    Exact rational comparison; ``extra`` carries each candidate's best
    elapsed time and probability.
    """
    check_oracle_scale(g, t_max, max_nodes=max_nodes, max_horizon=max_horizon)
    ve = frozenset(ve)
    if not ve:
        raise ArgumentError("explicit node set is empty")
    probs = {}
    best_t = {}
    for v in g.nodes:
        oracle = PathOracle(g, v, ve, params, t_max=t_max)
        best, arg = 0, None
        for t in range(t_max + 1):
            pr = oracle.max_probability(t)
            if pr > best:
                best, arg = pr, t
        probs[v] = best
        best_t[v] = arg
    top = max(probs.values())
    if top == 0:
        raise ArgumentError(f"no consistent infection path within t_max={t_max}")
    winners = [v for v, pr in probs.items() if pr == top]
    scores = {v: (math.log(pr) if pr > 0 else -math.inf) for v, pr in probs.items()}
    return SourceEstimate(
        "ml-path-oracle",
        winners,
        scores,
        extra={"best_t": best_t, "probability": probs},
    )
