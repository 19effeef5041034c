from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from sisource.graph import Graph, read_edge_list

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def fig2():
    """The ten-node worked-example tree; labels v1..v10 map to ids 0..9."""
    g, _ = read_edge_list(DATA / "fig2.edgelist")
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ids(g: Graph, *labels: str) -> list[int]:
    table = {g.label(u): u for u in g.nodes}
    return [table[s] for s in labels]


def to_nx(g: Graph) -> nx.Graph:
    out = nx.Graph()
    out.add_nodes_from(g.nodes)
    out.add_edges_from(g.edges)
    return out


def random_tree(rng: np.random.Generator, n: int) -> Graph:
    if n == 1:
        return Graph(1, [])
    if n == 2:
        return Graph(2, [(0, 1)])
    t = nx.from_prufer_sequence([int(x) for x in rng.integers(0, n, size=n - 2)])
    return Graph(n, list(t.edges))


def random_connected(rng: np.random.Generator, n: int, extra: int) -> Graph:
    edges = {(int(rng.integers(i)), i) for i in range(1, n)}
    for _ in range(extra):
        a, b = (int(x) for x in rng.choice(n, size=2, replace=False))
        if (a, b) not in edges and (b, a) not in edges:
            edges.add((a, b))
    return Graph(n, sorted(edges))


_CRITERIA: list[tuple[str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None and rep.when == "call":
        status = "PASS" if rep.passed else "FAIL"
        _CRITERIA.append((mark.args[0], status, getattr(item, "detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, status, detail in sorted(_CRITERIA, key=lambda c: int(c[0][1:])):
        terminalreporter.write_line(f"{name} {status} {detail}".rstrip())
