import numpy as np
import pytest

from labelfree import _accel
from labelfree.graph import TextAttributedGraph


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request, monkeypatch):
    """Run the test once per kernel implementation."""
    if request.param == "numba" and _accel.njit(lambda: 0) is None:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_accel, "NUMBA_ENABLED", request.param == "numba")
    return request.param


def make_graph(n, edges=(), features=None, classes=("a", "b"), gold=None, texts=None):
    if features is None:
        features = np.eye(n, max(n, 1))
    return TextAttributedGraph(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2), np.asarray(features, float),
                               tuple(classes), texts=texts, gold_labels=gold)


def random_graph(n, p, rng, dim=3, classes=("a", "b"), gold=False):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    y = rng.integers(len(classes), size=n) if gold else None
    return make_graph(n, pairs, rng.normal(size=(n, dim)), classes, gold=y)


def dense_adjacency(graph):
    a = np.zeros((graph.node_count, graph.node_count))
    for i, j in graph.edges:
        a[i, j] = a[j, i] = 1.0
    return a
