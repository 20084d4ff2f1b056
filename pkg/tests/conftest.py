import sys
import numpy as np
import pytest

from agmrf.graph import areal_graph, temporal_graph


def random_connected_graph(rng, n, countries=None):
    """Random spanning tree plus extra edges, as an adjacency dict."""
    edges = {(int(rng.integers(0, i)), i) for i in range(1, n)}
    for _ in range(int(rng.integers(0, n + 1))):
        a, b = rng.integers(0, n, 2)
        if a != b:
            edges.add((int(min(a, b)), int(max(a, b))))
    adj = {i + 1: [] for i in range(n)}
    for a, b in edges:
        adj[a + 1].append(b + 1)
        adj[b + 1].append(a + 1)
    labels = None
    if countries:
        labels = {i + 1: int(rng.integers(1, countries + 1)) for i in range(n)}
    return areal_graph(adj, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def path4_countries():
    return areal_graph({1: [2], 2: [1, 3], 3: [2, 4], 4: [3]}, {1: 1, 2: 1, 3: 2, 4: 2})


@pytest.fixture
def conflict4():
    return temporal_graph(4, [3])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
