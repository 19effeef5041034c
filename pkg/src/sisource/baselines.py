"""Centrality benchmarks: distance, closeness and betweenness centers of V_e.

Candidates are every node in the explicit nodes' component. Distances come
from one batched BFS per explicit node; betweenness uses Brandes'
accumulation run level by level over all explicit sources at once.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction

import numpy as np

from .errors import ArgumentError, UnreachableError
from .estimate import SourceEstimate, argbest
from .graph import Graph, distance_matrix

_TOL = 1e-9


def _prepare(g: Graph, ve, dist=None) -> tuple[list[int], list[int], np.ndarray]:
    ve = sorted(set(ve))
    if not ve:
        raise ArgumentError("explicit node set is empty")
    for u in ve:
        g.check_node(u)
    dm = distance_matrix(g, ve) if dist is None else dist
    comp = sorted(g.component(ve[0]))
    if not np.isfinite(dm[:, comp]).all():
        raise UnreachableError("explicit nodes lie in different components")
    return ve, comp, dm


def distance_center(g: Graph, ve, dist=None) -> SourceEstimate:
    """Nodes minimizing the total hop distance to V_e.

    ``dist`` may carry a precomputed ``distance_matrix(g, sorted(ve))``.
    """
    ve, comp, dm = _prepare(g, ve, dist)
    total = dm[:, comp].sum(axis=0)
    scores = {u: float(s) for u, s in zip(comp, total)}
    return SourceEstimate("dc", argbest(scores, "min", _TOL), scores, direction="min")


def closeness_center(g: Graph, ve, dist=None) -> SourceEstimate:
    """Nodes maximizing the sum of inverse distances to the other explicit nodes."""
    ve, comp, dm = _prepare(g, ve, dist)
    sub = dm[:, comp]
    with np.errstate(divide="ignore"):
        inv = np.where(sub > 0, 1.0 / sub, 0.0)
    scores = {u: float(s) for u, s in zip(comp, inv.sum(axis=0))}
    return SourceEstimate("cc", argbest(scores, "max", _TOL), scores)


def _levels(dm: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(node, source column) index pairs grouped by hop distance."""
    k = dm.shape[0]
    flat = np.where(np.isfinite(dm), dm, -1).astype(np.int64).T.ravel()
    order = np.argsort(flat, kind="stable")
    depth = int(flat.max())
    cuts = np.searchsorted(flat[order], np.arange(depth + 2))
    return [(order[a:b] // k, order[a:b] % k) for a, b in zip(cuts[:-1], cuts[1:])]


def betweenness_scores(g: Graph, ve, dist=None) -> dict[int, float]:
    """Pair-dependency of every component node over unordered explicit pairs."""
    ve, comp, dm = _prepare(g, ve, dist)
    if len(ve) < 2:
        raise ArgumentError("betweenness needs at least two explicit nodes")
    a = g.csr
    k = len(ve)
    levels = _levels(dm)
    src = np.asarray(ve)
    is_target = np.zeros(g.n, dtype=bool)
    is_target[src] = True

    sigma = np.zeros((g.n, k))
    sigma[src, np.arange(k)] = 1.0
    buf = np.zeros((g.n, k))
    for d in range(1, len(levels)):
        r0, c0 = levels[d - 1]
        buf[r0, c0] = sigma[r0, c0]
        r, c = levels[d]
        sigma[r, c] = (a @ buf)[r, c]
        buf[r0, c0] = 0.0

    delta = np.zeros((g.n, k))
    for d in range(len(levels) - 1, 0, -1):
        r, c = levels[d]
        hit = is_target[r] & (r != src[c])
        buf[r, c] = (hit + delta[r, c]) / sigma[r, c]
        r1, c1 = levels[d - 1]
        delta[r1, c1] = sigma[r1, c1] * (a @ buf)[r1, c1]
        buf[r, c] = 0.0
    delta[src, np.arange(k)] = 0.0
    total = delta.sum(axis=1) / 2.0
    return {u: float(total[u]) for u in comp}


def betweenness_scores_exact(g: Graph, ve) -> dict[int, Fraction]:
    """Rational Brandes, one source at a time (for small graphs and checks)."""
    ve, comp, _ = _prepare(g, ve)
    if len(ve) < 2:
        raise ArgumentError("betweenness needs at least two explicit nodes")
    targets = set(ve)
    total = {u: Fraction(0) for u in comp}
    for s in ve:
        dist = {s: 0}
        sigma = {s: 1}
        order = []
        queue = deque([s])
        while queue:
            x = queue.popleft()
            order.append(x)
            for y in g.neighbors(x):
                if y not in dist:
                    dist[y] = dist[x] + 1
                    sigma[y] = 0
                    queue.append(y)
                if dist[y] == dist[x] + 1:
                    sigma[y] += sigma[x]
        delta = {u: Fraction(0) for u in order}
        for w in reversed(order):
            gain = (int(w in targets and w != s) + delta[w]) / sigma[w]
            for x in g.neighbors(w):
                if dist[x] == dist[w] - 1:
                    delta[x] += sigma[x] * gain
        for u in order:
            if u != s:
                total[u] += delta[u]
    return {u: c / 2 for u, c in total.items()}


def betweenness_center(g: Graph, ve, dist=None, exact: bool = False) -> SourceEstimate:
    """Nodes lying on the largest share of shortest paths between explicit pairs."""
    if exact:
        scores = betweenness_scores_exact(g, ve)
        return SourceEstimate("bc", argbest(scores, "max"), scores)
    scores = betweenness_scores(g, ve, dist)
    return SourceEstimate("bc", argbest(scores, "max", _TOL), scores)


BASELINES = {"dc": distance_center, "cc": closeness_center, "bc": betweenness_center}
