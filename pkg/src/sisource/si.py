"""Discrete-time SI spreading with partially observed (explicit) infections.

A susceptible node (uninfected, with an infected neighbor in the previous
slot) becomes infected in the next slot with probability ``p``; at that moment
it is explicit with probability ``q[u]``. Infected nodes never change state.
Paths store only first-infection slots and explicit flags; the s/n distinction
is derived from the graph on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterator, Mapping

import numpy as np

from .errors import ArgumentError, PathValidationError, ScaleRefusal, StructureError, UnreachableError
from .graph import Graph, RootedTree, _bfs, minimal_spanning_subtree, subtree_heights

SUSCEPTIBLE, INFECTED, EXPLICIT, NON_SUSCEPTIBLE = "s", "i", "e", "n"


def q_lower_bound(p):
    """Smallest explicitness probability allowed for infection probability ``p``."""
    return max(0, 2 - 1 / p)


@dataclass(frozen=True)
class SIParams:
    """Infection probability ``p`` and per-node explicitness probabilities ``q``.

    With ``strict`` the lower bound ``q[u] >= max(0, 2 - 1/p)`` is enforced.
    """

    p: float | Fraction
    q: tuple
    strict: bool = True

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ArgumentError(f"p must lie in (0, 1), got {self.p}")
        object.__setattr__(self, "q", tuple(self.q))
        for u, qu in enumerate(self.q):
            if not 0 <= qu <= 1:
                raise ArgumentError(f"q[{u}]={qu} outside [0, 1]")
        if self.strict and not self.satisfies_bound():
            bad = self.violations()[0]
            raise ArgumentError(
                f"q[{bad}]={self.q[bad]} below max(0, 2 - 1/p) = {q_lower_bound(self.p)} for p={self.p}"
            )

    @classmethod
    def uniform(cls, p, q, n: int, strict: bool = True) -> "SIParams":
        return cls(p, (q,) * n, strict=strict)

    def violations(self) -> list[int]:
        lb = q_lower_bound(self.p)
        return [u for u, qu in enumerate(self.q) if qu < lb]

    def satisfies_bound(self) -> bool:
        return not self.violations()

    def exact(self) -> "SIParams":
        """Same parameters as exact rationals (floats convert without rounding)."""
        return SIParams(Fraction(self.p), tuple(Fraction(x) for x in self.q), strict=False)


@dataclass(frozen=True)
class StopRule:
    """Either a fixed horizon or "stop once more than ``threshold`` nodes are infected"."""

    horizon: int | None = None
    threshold: int | None = None

    def __post_init__(self):
        if (self.horizon is None) == (self.threshold is None):
            raise ArgumentError("give exactly one of horizon or threshold")
        if self.horizon is not None and self.horizon < 0:
            raise ArgumentError("horizon must be >= 0")
        if self.threshold is not None and self.threshold < 1:
            raise ArgumentError("threshold must be >= 1")


@dataclass(frozen=True)
class InfectionPath:
    """Infection trajectory over slots ``0..t``.

    ``infected`` maps node -> (first infection slot, explicit flag).
    """

    source: int
    t: int
    infected: Mapping[int, tuple[int, bool]]
    meta: dict = field(default_factory=dict, compare=False)

    def first_infection(self, u: int) -> int | None:
        rec = self.infected.get(u)
        return rec[0] if rec is not None else None

    def explicit_nodes(self) -> frozenset[int]:
        return frozenset(u for u, (_, ex) in self.infected.items() if ex)

    def infected_nodes(self) -> frozenset[int]:
        return frozenset(self.infected)

    def state(self, g: Graph, u: int, tau: int) -> str:
        rec = self.infected.get(u)
        if rec is not None and rec[0] <= tau:
            return EXPLICIT if rec[1] else INFECTED
        for w in g.neighbors(u):
            tw = self.first_infection(w)
            if tw is not None and tw <= tau:
                return SUSCEPTIBLE
        return NON_SUSCEPTIBLE

    def to_json(self) -> dict:
        events = sorted(
            ({"node": u, "slot": s, "explicit": ex} for u, (s, ex) in self.infected.items()),
            key=lambda e: (e["slot"], e["node"]),
        )
        return {"source": self.source, "t": self.t, "events": events}

    @classmethod
    def from_json(cls, data: dict) -> "InfectionPath":
        infected = {int(e["node"]): (int(e["slot"]), bool(e["explicit"])) for e in data["events"]}
        return cls(int(data["source"]), int(data["t"]), infected)


def validate_path(g: Graph, path: InfectionPath) -> None:
    """Raise PathValidationError naming the first violated invariant."""
    if path.t < 0:
        raise PathValidationError("horizon t must be >= 0")
    src = path.infected.get(path.source)
    if src is None or src[0] != 0:
        raise PathValidationError(f"source {path.source} must be infected at slot 0")
    for u, (slot, _) in path.infected.items():
        if u not in g:
            raise PathValidationError(f"node {u} is not in the graph")
        if u == path.source:
            continue
        if slot < 1:
            raise PathValidationError(f"node {u} infected at slot {slot}; only the source may be infected at slot 0")
        if slot > path.t:
            raise PathValidationError(f"node {u} infected at slot {slot} after horizon {path.t}")
        if not any((tw := path.first_infection(w)) is not None and tw <= slot - 1 for w in g.neighbors(u)):
            raise PathValidationError(f"node {u} infected at slot {slot} without an infected neighbor at slot {slot - 1}")


def _node_terms(g: Graph, path: InfectionPath, nodes=None):
    """Per-node factor counts: (node, slots spent susceptible, outcome).

    outcome is 'e'/'i' for an infection (or the source's own explicitness) and
    None for a node that never gets infected.
    """
    for u in g.nodes if nodes is None else nodes:
        rec = path.infected.get(u)
        if u == path.source:
            yield u, 0, EXPLICIT if rec[1] else INFECTED
            continue
        exposed = [tw for w in g.neighbors(u) if (tw := path.first_infection(w)) is not None]
        if not exposed:
            continue
        s0 = min(exposed) + 1  # first slot whose transition u takes part in
        if rec is not None:
            yield u, rec[0] - s0, EXPLICIT if rec[1] else INFECTED
        elif s0 <= path.t:
            yield u, path.t - s0 + 1, None


def path_probability(g: Graph, path: InfectionPath, params: SIParams, nodes=None) -> Fraction:
    """Exact probability of ``path`` given its source (rational arithmetic).

    ``nodes`` restricts the product to those nodes' own transition factors.
    """
    validate_path(g, path)
    ex = params.exact()
    p = ex.p
    prob = Fraction(1)
    for u, stay, outcome in _node_terms(g, path, nodes):
        q = ex.q[u]
        prob *= (1 - p) ** stay
        if u == path.source:
            prob *= q if outcome == EXPLICIT else 1 - q
        elif outcome is not None:
            prob *= p * (q if outcome == EXPLICIT else 1 - q)
    return prob


def _log(x) -> float:
    return math.log(x) if x > 0 else -math.inf


def path_log_probability(g: Graph, path: InfectionPath, params: SIParams, nodes=None) -> float:
    """Natural log of the path probability; ``-inf`` for impossible paths."""
    validate_path(g, path)
    p = params.p
    lp, l1p = _log(p), _log(1 - p)
    total = 0.0
    for u, stay, outcome in _node_terms(g, path, nodes):
        q = params.q[u]
        if stay:
            total += stay * l1p
        if outcome is not None:
            if u != path.source:
                total += lp
            total += _log(q) if outcome == EXPLICIT else _log(1 - q)
    return total


def is_consistent(path: InfectionPath, ve) -> bool:
    """Every node of ``ve`` is explicit at slot t and nobody else ever is."""
    return path.explicit_nodes() == frozenset(ve) and all(
        path.infected[u][0] <= path.t for u in ve
    )


@dataclass(frozen=True)
class TimeRange:
    """Integer range ``[start, stop)``; ``stop=None`` means unbounded."""

    start: int
    stop: int | None = None

    def __contains__(self, t) -> bool:
        return t >= self.start and (self.stop is None or t < self.stop)

    def upto(self, t_max: int) -> range:
        end = t_max + 1 if self.stop is None else min(self.stop, t_max + 1)
        return range(self.start, end)


def _range_on_tree(g: Graph, v: int, ve) -> int:
    ve = set(ve)
    if not ve:
        raise ArgumentError("explicit node set is empty")
    _, dist, _ = _bfs(g, g.check_node(v))
    missing = [u for u in ve if u not in dist]
    if missing:
        raise UnreachableError(f"explicit node(s) {sorted(missing)} unreachable from {v}")
    return max(dist[u] for u in ve)


def feasible_times(g: Graph, v: int, ve) -> TimeRange:
    """Elapsed times under which source ``v`` can produce ``ve`` on a tree."""
    return TimeRange(_range_on_tree(g, v, ve))


def latest_infection_path(g: Graph, v: int, t: int, ve) -> InfectionPath:
    """Consistent path where every needed node is infected as late as possible.

    Only the minimal subtree spanning ``ve`` and ``v`` gets infected; node u in
    it is infected at ``t - height(u)`` with the subtree rooted at ``v``.
    """
    ve = frozenset(ve)
    v = g.check_node(v)
    h = minimal_spanning_subtree(g, ve | {v})
    tree = RootedTree.from_graph(h, v)
    heights = subtree_heights(tree)
    if t < heights[v]:
        raise ArgumentError(f"t={t} below the minimum feasible time {heights[v]} for source {v}")
    infected = {u: (0 if u == v else t - heights[u], u in ve) for u in tree.nodes}
    return InfectionPath(v, t, infected)


def simulate(
    g: Graph,
    source: int,
    params: SIParams,
    stop: StopRule,
    rng: np.random.Generator | int | None = None,
) -> InfectionPath:
    """Sample one infection path.

    With a threshold rule the run stops after the first slot that leaves more
    than ``threshold`` nodes infected; if the component runs out of
    susceptible nodes first, ``meta["exhausted"]`` is set.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    source = g.check_node(source)
    p = float(params.p)
    q = params.q
    infected = {source: (0, bool(rng.random() < q[source]))}
    susceptible = set(g.neighbors(source))
    t = 0
    exhausted = False
    while True:
        if stop.horizon is not None and t >= stop.horizon:
            break
        if stop.threshold is not None and len(infected) > stop.threshold:
            break
        if not susceptible:
            exhausted = stop.threshold is not None
            if stop.horizon is None:
                break
            t = stop.horizon
            break
        t += 1
        cand = sorted(susceptible)
        draws = rng.random((len(cand), 2))
        newly = []
        for u, (d_inf, d_ex) in zip(cand, draws):
            if d_inf < p:
                infected[u] = (t, bool(d_ex < q[u]))
                newly.append(u)
        for u in newly:
            susceptible.discard(u)
        for u in newly:
            for w in g.neighbors(u):
                if w not in infected:
                    susceptible.add(w)
    return InfectionPath(source, t, infected, meta={"exhausted": exhausted})


# ---------------------------------------------------------------------------
# Exhaustive oracles. Exponential; guarded.

ORACLE_MAX_NODES = 8
ORACLE_MAX_HORIZON = 4


def check_oracle_scale(g: Graph, t: int, max_nodes: int = ORACLE_MAX_NODES, max_horizon: int = ORACLE_MAX_HORIZON):
    if len(g) > max_nodes:
        raise ScaleRefusal(f"oracle guard: |V|={len(g)} exceeds {max_nodes}")
    if t > max_horizon:
        raise ScaleRefusal(f"oracle guard: horizon {t} exceeds {max_horizon}")


def enumerate_paths(g: Graph, source: int, t: int, ve=None) -> Iterator[InfectionPath]:
    """Every infection path from ``source`` over ``t`` slots.

    With ``ve`` given, explicit flags are fixed by membership (the only
    flags a consistent path can carry); otherwise both flags are enumerated.
    """
    check_oracle_scale(g, t)

    def flags(u):
        return (u in ve,) if ve is not None else (False, True)

    def extend(tau, infected):
        if tau == t:
            yield InfectionPath(source, t, dict(infected))
            return
        sus = sorted({w for u in infected for w in g.neighbors(u)} - infected.keys())
        for choice in product(*[(None,) + flags(u) for u in sus]):
            nxt = dict(infected)
            for u, c in zip(sus, choice):
                if c is not None:
                    nxt[u] = (tau + 1, c)
            yield from extend(tau + 1, nxt)

    for f in flags(source):
        yield from extend(0, {source: (0, f)})


class PathOracle:
    """Exact maximum of the path probability over all consistent paths.

    Dynamic programming over (slots remaining, infected set): the future of
    a path depends only on who is infected, because explicit flags of a
    consistent path are fixed by membership in ``ve``. Every path is
    covered, no structural shortcut from the tree analysis is used.
    """

    def __init__(self, g: Graph, source: int, ve, params: SIParams, forbid=(), t_max: int = ORACLE_MAX_HORIZON):
        self.g = g
        self.source = g.check_node(source)
        self.ve = frozenset(ve)
        ex = params.exact()
        self.p = ex.p
        _, dist, _ = _bfs(g, self.source)
        self.local = [u for u in sorted(dist) if dist[u] <= t_max]
        self.index = {u: i for i, u in enumerate(self.local)}
        self.nbr_mask = []
        for u in self.local:
            m = 0
            for w in g.neighbors(u):
                if w in self.index:
                    m |= 1 << self.index[w]
            self.nbr_mask.append(m)
        self.weight = [self.p * (ex.q[u] if u in self.ve else 1 - ex.q[u]) for u in self.local]
        self.source_factor = ex.q[self.source] if self.source in self.ve else 1 - ex.q[self.source]
        self.forbid_mask = sum(1 << self.index[u] for u in forbid if u in self.index)
        self.need = [self.index.get(u) for u in self.ve]
        # all-pairs hop distances inside the ball, for pruning
        self.dist = {}
        for u in self.local:
            _, du, _ = _bfs(g, u)
            self.dist[u] = du
        self._memo: dict[tuple[int, int], tuple[Fraction, int]] = {}

    def _gap(self, mask: int, u: int) -> int:
        best = math.inf
        du = self.dist[u]
        for i, w in enumerate(self.local):
            if mask >> i & 1:
                best = min(best, du.get(w, math.inf))
        return best

    def _best(self, r: int, mask: int) -> Fraction:
        key = (r, mask)
        hit = self._memo.get(key)
        if hit is not None:
            return hit[0]
        for u, i in zip(self.ve, self.need):
            if i is None or not (mask >> i & 1):
                if i is None or self._gap(mask, u) > r:
                    self._memo[key] = (Fraction(0), 0)
                    return Fraction(0)
        if r == 0:
            self._memo[key] = (Fraction(1), 0)
            return Fraction(1)
        sus = 0
        for i in range(len(self.local)):
            if mask >> i & 1:
                sus |= self.nbr_mask[i]
        sus &= ~mask
        free = sus & ~self.forbid_mask
        n_sus = bin(sus).count("1")
        one_minus_p = 1 - self.p
        best, arg = Fraction(0), 0
        sub = free
        while True:
            f = one_minus_p ** (n_sus - bin(sub).count("1"))
            m = sub
            while m:
                low = m & -m
                f *= self.weight[low.bit_length() - 1]
                m ^= low
            if f > best:
                cont = self._best(r - 1, mask | sub)
                if f * cont > best:
                    best, arg = f * cont, sub
            if sub == 0:
                break
            sub = (sub - 1) & free
        self._memo[key] = (best, arg)
        return best

    def max_probability(self, t: int) -> Fraction:
        """Largest probability of a consistent path with elapsed time ``t``."""
        return self.source_factor * self._best(t, 1 << self.index[self.source])

    def argmax_path(self, t: int) -> InfectionPath | None:
        if self.max_probability(t) == 0:
            return None
        mask = 1 << self.index[self.source]
        infected = {self.source: (0, self.source in self.ve)}
        for tau in range(1, t + 1):
            self._best(t - tau + 1, mask)
            sub = self._memo[(t - tau + 1, mask)][1]
            for i, u in enumerate(self.local):
                if sub >> i & 1:
                    infected[u] = (tau, u in self.ve)
            mask |= sub
        return InfectionPath(self.source, t, infected)


def max_consistent_probability(g: Graph, v: int, t: int, ve, params: SIParams, forbid=(), **guard) -> Fraction:
    check_oracle_scale(g, t, **guard)
    return PathOracle(g, v, ve, params, forbid=forbid, t_max=t).max_probability(t)


def require_tree(g: Graph) -> None:
    if not g.is_tree():
        raise StructureError("operation needs a tree graph")
