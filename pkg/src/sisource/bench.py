"""Synthetic networks and the error-distance experiment harness.

A run samples a network, a source, and the SI parameters. It then simulates
a spread until more than ``threshold`` nodes are infected, observes the
explicit nodes, and asks every configured method for a source estimate.
Each run draws from its own stream derived from (master seed, policy, run),
so results do not depend on worker scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BASELINES
from .errors import ConfigError
from .general import candidate_ball, estimate_source_general
from .graph import Graph, bfs_distances, distance_matrix, read_edge_list
from .si import SIParams, StopRule, q_lower_bound, simulate
from .tree import estimate_source_tree

log = logging.getLogger(__name__)

CSV_HEADER = (
    "run",
    "network",
    "p",
    "q_policy",
    "true_source",
    "method",
    "estimate",
    "error_distance",
    "n_infected",
    "n_explicit",
    "boundary_flag",
)

NETWORKS = ("regular-tree", "random1-tree", "random2-tree", "small-world", "edge-list")
METHODS = ("jce", "rg", "dc", "cc", "bc")


# ---------------------------------------------------------------------------
# Generators


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _grow_tree(budget: int, degree_of) -> Graph:
    """Breadth-first growth; a node gets all its children at once."""
    edges = []
    n = 1
    frontier = 0
    while n < budget:
        want = degree_of(frontier) - (frontier != 0)
        for _ in range(want):
            edges.append((frontier, n))
            n += 1
        frontier += 1
    return Graph(n, edges)


def gen_regular_tree(seed=None, degree_range=(3, 6), budget: int = 5000) -> Graph:
    """Tree whose interior nodes all share one degree drawn from ``degree_range``."""
    rng = _rng(seed)
    lo, hi = degree_range
    d = int(rng.integers(lo, hi + 1))
    if budget < d + 1:
        raise ConfigError(f"budget {budget} below degree + 1 = {d + 1}")
    return _grow_tree(budget, lambda _: d)


def gen_random_tree(seed=None, mode: str = "random1", budget: int = 5000) -> Graph:
    """Tree with per-node degree uniform on {3..6} (random1) or {3, 6} (random2)."""
    rng = _rng(seed)
    choices = {"random1": (3, 4, 5, 6), "random2": (3, 6)}.get(mode)
    if choices is None:
        raise ConfigError(f"unknown random tree mode {mode!r}")
    if budget < 2:
        raise ConfigError("budget must be at least 2")
    return _grow_tree(budget, lambda _: int(rng.choice(choices)))


@dataclass
class SmallWorldStats:
    regenerated: int = 0


def gen_small_world(seed=None, n: int = 5000, k: int = 4, beta: float = 0.1, stats: SmallWorldStats | None = None) -> Graph:
    """Connected Watts-Strogatz graph: ring lattice, each edge rewired with probability ``beta``."""
    if k % 2 or not 0 < k < n:
        raise ConfigError(f"small-world needs even 0 < k < n (k={k}, n={n})")
    if not 0 <= beta <= 1:
        raise ConfigError("beta must lie in [0, 1]")
    rng = _rng(seed)
    while True:
        g = _watts_strogatz(rng, n, k, beta)
        if g.is_connected():
            return g
        if stats is not None:
            stats.regenerated += 1
        log.info("small-world sample disconnected; regenerating")


def _watts_strogatz(rng: np.random.Generator, n: int, k: int, beta: float) -> Graph:
    adj = [set() for _ in range(n)]
    for j in range(1, k // 2 + 1):
        for u in range(n):
            w = (u + j) % n
            adj[u].add(w)
            adj[w].add(u)
    for j in range(1, k // 2 + 1):
        for u in range(n):
            w = (u + j) % n
            if rng.random() >= beta or w not in adj[u]:
                continue
            if len(adj[u]) >= n - 1:
                continue
            while True:
                x = int(rng.integers(n))
                if x != u and x not in adj[u]:
                    break
            adj[u].discard(w)
            adj[w].discard(u)
            adj[u].add(x)
            adj[x].add(u)
    return Graph(n, [(u, w) for u in range(n) for w in adj[u] if u < w])


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    network: str = "random2-tree"
    runs: int = 100
    threshold: int = 200
    p: str = "uniform"  # "uniform" draws p ~ U(0, 1); a number fixes it
    q_policy: str = "eq1-uniform"  # or "explicit-ratio"
    explicit_ratio: tuple[float, ...] = (1.0,)
    methods: tuple[str, ...] = ("jce", "dc", "cc", "bc")
    seed: int = 0
    budget: int = 5000
    degree_range: tuple[int, int] = (3, 6)
    n: int = 5000
    k: int = 4
    beta: float = 0.1
    graph: str | None = None
    source: str = "auto"  # root | uniform | auto (root on synthetic trees)
    candidates: str = "auto"  # all | ball | auto (ball on non-trees)
    radius: int = 2
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.network not in NETWORKS:
            raise ConfigError(f"unknown network {self.network!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.threshold < 1:
            raise ConfigError("threshold must be >= 1")
        if self.p != "uniform":
            try:
                val = float(self.p)
            except ValueError:
                raise ConfigError(f"p must be 'uniform' or a number, got {self.p!r}") from None
            if not 0 < val < 1:
                raise ConfigError("p must lie in (0, 1)")
        if self.q_policy not in ("eq1-uniform", "explicit-ratio"):
            raise ConfigError(f"unknown q_policy {self.q_policy!r}")
        if not self.explicit_ratio or any(not 0 < r <= 1 for r in self.explicit_ratio):
            raise ConfigError("explicit ratios must lie in (0, 1]")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown method(s) {bad}")
        if self.network == "edge-list" and not self.graph:
            raise ConfigError("network = edge-list needs a graph path")
        if self.source not in ("auto", "root", "uniform"):
            raise ConfigError(f"unknown source policy {self.source!r}")
        if self.candidates not in ("auto", "all", "ball"):
            raise ConfigError(f"unknown candidates policy {self.candidates!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def is_tree_network(self) -> bool:
        return self.network.endswith("-tree")

    def policies(self) -> list[tuple[str, float | None]]:
        if self.q_policy == "eq1-uniform":
            return [("eq1-uniform", None)]
        return [(f"explicit-ratio:{r:g}", r) for r in self.explicit_ratio]

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _convert(name: str, raw: str, lineno: int):
    kinds = {f.name: f.type for f in fields(ExperimentConfig)}
    kind = kinds[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if name == "explicit_ratio":
            return tuple(float(x) for x in raw.split(","))
        if name == "methods":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if name == "degree_range":
            lo, hi = (int(x) for x in raw.split(","))
            return (lo, hi)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {name}") from None
    return raw


def parse_config(text: str, base: Path | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines (``#`` starts a comment)."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, lineno)
    if base is not None and values.get("graph"):
        values["graph"] = str((base / values["graph"]).resolve())
    return ExperimentConfig(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base=path.parent)


# ---------------------------------------------------------------------------
# Runs


@dataclass
class RunRecord:
    run: int
    network: str
    p: float
    q_policy: str
    true_source: int
    estimates: dict[str, int]
    error_distance: dict[str, int]
    tie_error_distance: dict[str, int]
    n_infected: int
    n_explicit: int
    boundary_flag: bool
    resampled: int = 0
    labels: list[str] | None = field(default=None, repr=False)

    def rows(self) -> list[list]:
        name = (lambda u: self.labels[u]) if self.labels else str
        return [
            [
                self.run,
                self.network,
                repr(self.p),
                self.q_policy,
                name(self.true_source),
                m,
                name(self.estimates[m]),
                self.error_distance[m],
                self.n_infected,
                self.n_explicit,
                int(self.boundary_flag),
            ]
            for m in self.estimates
        ]


def _network(cfg: ExperimentConfig, rng: np.random.Generator, cache: dict) -> tuple[Graph, int | None]:
    """Graph for one run and the generator root (trees only)."""
    if cfg.network == "regular-tree":
        return gen_regular_tree(rng, cfg.degree_range, cfg.budget), 0
    if cfg.network in ("random1-tree", "random2-tree"):
        return gen_random_tree(rng, cfg.network.split("-")[0], cfg.budget), 0
    if cfg.network == "small-world":
        stats = cache.setdefault("sw_stats", SmallWorldStats())
        return gen_small_world(rng, cfg.n, cfg.k, cfg.beta, stats), None
    if "graph" not in cache:
        cache["graph"] = read_edge_list(cfg.graph)[0]
    return cache["graph"], None


def _estimate(method: str, g: Graph, ve: list[int], params: SIParams, cfg: ExperimentConfig, tree: bool, shared: dict):
    if method == "jce":
        return estimate_source_tree(g, ve)
    if method == "rg":
        policy = cfg.candidates if cfg.candidates != "auto" else ("all" if tree else "ball")
        cands = candidate_ball(g, ve, cfg.radius) if policy == "ball" else sorted(g.component(ve[0]))
        return estimate_source_general(g, ve, params, "rg", candidates=cands)
    if method == "bc" and len(ve) < 2:
        # a lone explicit node carries no pair information; fall back to itself
        return None
    if "dist" not in shared:
        shared["dist"] = distance_matrix(g, ve)
    return BASELINES[method](g, ve, dist=shared["dist"])


def run_one(cfg: ExperimentConfig, policy_index: int, run: int, cache: dict | None = None) -> RunRecord:
    cache = {} if cache is None else cache
    label, ratio = cfg.policies()[policy_index]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, policy_index, run]))
    g, root = _network(cfg, rng, cache)
    comp_size = len(g.component(root if root is not None else g.nodes[0]))
    if comp_size <= cfg.threshold:
        raise ConfigError(f"graph component of {comp_size} nodes cannot exceed threshold {cfg.threshold}")

    use_root = cfg.source == "root" or (cfg.source == "auto" and root is not None)
    if use_root and root is not None:
        source = root
    else:
        source = int(rng.integers(g.n))
        while g.degree(source) == 0:
            source = int(rng.integers(g.n))

    p = float(cfg.p) if cfg.p != "uniform" else 0.0
    while p <= 0.0:
        p = float(rng.random())

    resampled = 0
    if ratio is None:
        lb = q_lower_bound(p)
        q = lb + (1 - lb) * rng.random(g.n)
        params = SIParams(p, tuple(float(x) for x in q))
        while True:
            path = simulate(g, source, params, StopRule(threshold=cfg.threshold), rng)
            ve = sorted(path.explicit_nodes())
            if ve:
                break
            resampled += 1
        scoring = params
    else:
        blind = SIParams.uniform(p, 0.0, g.n, strict=False)
        path = simulate(g, source, blind, StopRule(threshold=cfg.threshold), rng)
        infected = sorted(path.infected_nodes())
        while True:
            ve = [u for u, keep in zip(infected, rng.random(len(infected)) < ratio) if keep]
            if ve:
                break
            resampled += 1
        scoring = SIParams.uniform(p, min(ratio, 0.99), g.n, strict=False)

    infected = path.infected_nodes()
    tree = root is not None or g.is_tree()
    boundary = bool(path.meta.get("exhausted")) or any(g.degree(u) <= 1 for u in infected)
    dist = bfs_distances(g, source)
    estimates, errors, tie_errors = {}, {}, {}
    shared: dict = {}
    for m in cfg.methods:
        est = _estimate(m, g, ve, scoring, cfg, tree, shared)
        picks = est.estimators if est is not None else ve
        estimates[m] = picks[0]
        errors[m] = int(dist[picks[0]])
        tie_errors[m] = int(min(dist[u] for u in picks))
    return RunRecord(
        run=run,
        network=cfg.network,
        p=p,
        q_policy=label,
        true_source=source,
        estimates=estimates,
        error_distance=errors,
        tie_error_distance=tie_errors,
        n_infected=len(infected),
        n_explicit=len(ve),
        boundary_flag=boundary,
        resampled=resampled,
        labels=g.labels,
    )


def _run_chunk(args) -> list[RunRecord]:
    cfg, jobs = args
    cache: dict = {}
    return [run_one(cfg, pi, r, cache) for pi, r in jobs]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in self.records:
            w.writerows(rec.rows())
        return buf.getvalue()

    def summary(self) -> dict:
        groups = []
        for label, _ in self.config.policies():
            recs = [r for r in self.records if r.q_policy == label]
            for m in self.config.methods:
                all_err = [r.error_distance[m] for r in recs]
                clean = [r.error_distance[m] for r in recs if not r.boundary_flag]
                groups.append(
                    {
                        "q_policy": label,
                        "method": m,
                        **_stats(all_err),
                        "filtered": _stats(clean),
                        "tie_min_mean": _mean([r.tie_error_distance[m] for r in recs]),
                    }
                )
        return {
            "metadata": {
                "version": __version__,
                "seed": self.config.seed,
                "config_hash": self.config.digest(),
            },
            "groups": groups,
            "runs": len(self.records),
            "boundary_runs": sum(r.boundary_flag for r in self.records),
            "resampled_observations": sum(r.resampled for r in self.records),
        }

    def means(self, policy: str | None = None) -> dict[str, float]:
        groups = self.summary()["groups"]
        if policy is not None:
            groups = [gr for gr in groups if gr["q_policy"] == policy]
        return {gr["method"]: gr["mean"] for gr in groups}

    def write(self, csv_path: str | Path, summary_path: str | Path | None = None) -> None:
        Path(csv_path).write_text(self.csv_text())
        if summary_path is not None:
            Path(summary_path).write_text(json.dumps(self.summary(), sort_keys=True, indent=2) + "\n")


def _mean(xs) -> float | None:
    return float(np.mean(xs)) if xs else None


def _stats(xs) -> dict:
    if not xs:
        return {"mean": None, "stddev": None, "count": 0, "ci95": None}
    arr = np.asarray(xs, dtype=float)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    half = 1.96 * sd / math.sqrt(len(arr))
    mean = float(arr.mean())
    return {"mean": mean, "stddev": sd, "count": len(arr), "ci95": [mean - half, mean + half]}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    workers = cfg.workers if workers is None else workers
    jobs = [(pi, r) for pi in range(len(cfg.policies())) for r in range(cfg.runs)]
    if workers <= 1:
        records = _run_chunk((cfg, jobs))
    else:
        chunks = [jobs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            records = [rec for part in pool.map(_run_chunk, [(cfg, c) for c in chunks]) for rec in part]
        order = {label: i for i, (label, _) in enumerate(cfg.policies())}
        records.sort(key=lambda r: (order[r.q_policy], r.run))
    return ExperimentResult(cfg, records)


__all__ = [
    "CSV_HEADER",
    "ExperimentConfig",
    "ExperimentResult",
    "RunRecord",
    "gen_random_tree",
    "gen_regular_tree",
    "gen_small_world",
    "load_config",
    "parse_config",
    "run_experiment",
    "run_one",
]
