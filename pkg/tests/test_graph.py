import json
import os
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_adjacency, make_graph, random_graph
from labelfree.graph import (BundleError, PageRankWarning, SparseNormalizedAdjacency, TextAttributedGraph,
                             convert_linqs, degrees, load_graph_bundle, normalized_adjacency, pagerank,
                             propagate, save_graph_bundle)


def write_bundle(root, nodes, edges, features, classes, dim=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / "classes.json").write_text(json.dumps(classes))
    (root / "nodes.jsonl").write_text("".join(json.dumps(n) + "\n" for n in nodes))
    (root / "edges.tsv").write_text("".join(f"{a}\t{b}\n" for a, b in edges))
    d = dim if dim is not None else len(features[0])
    (root / "features.csv").write_text(f"dim={d}\n" + "".join(",".join(map(str, r)) + "\n" for r in features))
    return root


def tiny_bundle(tmp_path, **kw):
    nodes = [{"id": "n0", "text": "alpha", "gold": "x"}, {"id": "n1", "text": "beta", "gold": "y"},
             {"id": "n2", "text": "gamma", "gold": "x"}]
    args = dict(nodes=nodes, edges=[("n0", "n1"), ("n1", "n2")],
                features=[[0, 1, 2, 3], [1, 1, 1, 1], [0.5, 0, 0, 2]], classes=["x", "y"])
    args.update(kw)
    return write_bundle(tmp_path / "b", **args)


# ---------------------------------------------------------------- data model

def test_graph_rejects_self_loop():
    with pytest.raises(ValueError, match="self-loop"):
        make_graph(3, [(1, 1)])


def test_graph_rejects_out_of_range_edge():
    with pytest.raises(ValueError, match="out of range"):
        make_graph(3, [(0, 5)])


def test_graph_rejects_non_finite_features():
    f = np.zeros((2, 2))
    f[1, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        make_graph(2, [], f)


def test_graph_rejects_bad_gold():
    with pytest.raises(ValueError):
        make_graph(2, [], gold=[0, 2])


def test_graph_is_immutable():
    g = make_graph(3, [(0, 1)])
    with pytest.raises(ValueError):
        g.features[0, 0] = 5.0
    with pytest.raises(AttributeError):
        g.node_count = 4


def test_duplicate_and_reversed_edges_collapse():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = make_graph(3, [(0, 1), (1, 0), (0, 1), (2, 1)])
    assert g.edges.tolist() == [[0, 1], [1, 2]]


# ---------------------------------------------------------------- bundles

def test_load_tiny_bundle(tmp_path):
    g = load_graph_bundle(tiny_bundle(tmp_path))
    assert (g.node_count, g.feature_dim, g.edge_count, g.num_classes) == (3, 4, 2, 2)
    assert g.gold_labels.tolist() == [0, 1, 0]
    assert g.node_ids == ("n0", "n1", "n2")
    assert g.features.dtype == np.float64


def test_bundle_edge_out_of_range(tmp_path):
    root = tiny_bundle(tmp_path, edges=[("n0", "n1"), ("n0", "n5")])
    with pytest.raises(BundleError, match=r"edges.tsv:2:.*out of range"):
        load_graph_bundle(root)


def test_bundle_missing_file(tmp_path):
    root = tiny_bundle(tmp_path)
    os.remove(root / "features.csv")
    with pytest.raises(BundleError, match="features.csv"):
        load_graph_bundle(root)


def test_bundle_dimension_mismatch(tmp_path):
    root = tiny_bundle(tmp_path, features=[[0, 1, 2, 3], [1, 1, 1, 1]])
    with pytest.raises(BundleError, match="features.csv"):
        load_graph_bundle(root)


def test_bundle_non_finite_reports_line(tmp_path):
    root = tiny_bundle(tmp_path, features=[[0, 1, 2, 3], [1, 1, "nan", 1], [0, 0, 0, 0]])
    with pytest.raises(BundleError, match=r"features.csv:3"):
        load_graph_bundle(root)


def test_bundle_self_loop_rejected(tmp_path):
    root = tiny_bundle(tmp_path, edges=[("n1", "n1")])
    with pytest.raises(BundleError, match="self-loop"):
        load_graph_bundle(root)


def test_bundle_directed_input_symmetrised_with_warning(tmp_path):
    root = tiny_bundle(tmp_path, edges=[("n0", "n1"), ("n1", "n0")])
    with pytest.warns(UserWarning):
        g = load_graph_bundle(root)
    assert g.edge_count == 1


def test_bundle_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    base = random_graph(25, 0.2, rng, dim=5, gold=True)
    g = TextAttributedGraph(25, base.edges, base.features, base.class_names,
                            texts=tuple(f"text of node {i}, with \"quotes\"" for i in range(25)),
                            gold_labels=base.gold_labels, provenance="unit-test")
    g2 = load_graph_bundle(save_graph_bundle(g, tmp_path / "rt"))
    assert g.same_as(g2)
    np.testing.assert_array_equal(g.features, g2.features)
    g3 = load_graph_bundle(save_graph_bundle(g2, tmp_path / "rt2"))
    assert g2.same_as(g3)


def test_bundle_widens_float32_text(tmp_path):
    root = tiny_bundle(tmp_path, features=[[np.float32(0.1)] * 4, [1, 1, 1, 1], [0, 0, 0, 0]])
    g = load_graph_bundle(root)
    assert g.features.dtype == np.float64


def test_convert_linqs(tmp_path):
    (tmp_path / "x.content").write_text("p1 1 0 A\np2 0 1 B\np3 1 1 A\n")
    (tmp_path / "x.cites").write_text("p1 p2\np2 p1\np3 p2\np3 p9\n")
    g = convert_linqs(tmp_path / "x.content", tmp_path / "x.cites", tmp_path / "out")
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    assert load_graph_bundle(tmp_path / "out").same_as(g)


CORA = os.environ.get("LABELFREE_CORA_BUNDLE")


@pytest.mark.skipif(not CORA, reason="set LABELFREE_CORA_BUNDLE to a Cora bundle directory")
def test_cora_bundle_sizes():
    g = load_graph_bundle(CORA)
    assert g.node_count == 2708 and g.num_classes == 7
    assert g.edge_count == 5429
    assert degrees(g).sum() == 2 * g.edge_count


# ---------------------------------------------------------------- adjacency

def test_adjacency_isolated_nodes_identity():
    adj = normalized_adjacency(make_graph(2))
    np.testing.assert_array_equal(adj.to_dense(), np.eye(2))


def test_adjacency_single_edge():
    adj = normalized_adjacency(make_graph(2, [(0, 1)]))
    np.testing.assert_allclose(adj.to_dense(), np.full((2, 2), 0.5), rtol=0, atol=1e-15)


def test_adjacency_path_entry():
    d = normalized_adjacency(make_graph(3, [(0, 1), (1, 2)])).to_dense()
    assert d[0, 1] == pytest.approx(1 / np.sqrt(6), abs=1e-15)
    assert d[1, 1] == pytest.approx(1 / 3, abs=1e-15)


def test_adjacency_matches_dense_formula():
    rng = np.random.default_rng(1)
    g = random_graph(30, 0.15, rng)
    a = dense_adjacency(g) + np.eye(30)
    dinv = 1 / np.sqrt(a.sum(1))
    np.testing.assert_allclose(normalized_adjacency(g).to_dense(), dinv[:, None] * a * dinv[None], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 25), st.floats(0, 1), st.integers(0, 10_000))
def test_adjacency_bitwise_symmetric(n, p, seed):
    g = random_graph(n, p, np.random.default_rng(seed))
    d = normalized_adjacency(g).to_dense()
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) > 0)


def test_degrees():
    star = make_graph(5, [(0, i) for i in range(1, 5)])
    assert degrees(star).tolist() == [4, 1, 1, 1, 1]
    assert degrees(make_graph(1)).tolist() == [0]
    g = random_graph(40, 0.1, np.random.default_rng(2))
    assert degrees(g).sum() == 2 * g.edge_count


# ---------------------------------------------------------------- propagate

def test_propagate_zero_hops_returns_input():
    x = np.arange(6.0).reshape(3, 2)
    out = propagate(x, normalized_adjacency(make_graph(3, [(0, 1)])), 0)
    np.testing.assert_array_equal(out, x)


def test_propagate_identity_adjacency():
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(propagate(x, SparseNormalizedAdjacency.identity(4), 5), x)


def test_propagate_path_matches_dense(kernel_backend):
    g = make_graph(3, [(0, 1), (1, 2)])
    adj = normalized_adjacency(g)
    x = np.random.default_rng(3).normal(size=(3, 2))
    np.testing.assert_allclose(propagate(x, adj, 1), adj.to_dense() @ x, rtol=0, atol=1e-15)


def test_propagate_dimension_mismatch():
    with pytest.raises(ValueError):
        propagate(np.zeros((4, 2)), SparseNormalizedAdjacency.identity(3), 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 1000))
def test_propagate_composes(a, b, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(15, 0.2, rng)
    adj = normalized_adjacency(g)
    x = rng.normal(size=(15, 3))
    np.testing.assert_allclose(propagate(x, adj, a + b), propagate(propagate(x, adj, a), adj, b), atol=1e-10)


# ---------------------------------------------------------------- pagerank

def dense_pagerank(graph, damping=0.85, iters=3000):
    n = graph.node_count
    a = dense_adjacency(graph)
    deg = a.sum(1)
    m = np.zeros((n, n))
    for j in range(n):
        m[:, j] = a[:, j] / deg[j] if deg[j] else 1.0 / n
    x = np.full(n, 1 / n)
    for _ in range(iters):
        x = damping * m @ x + (1 - damping) / n
    return x / x.sum()


def test_pagerank_regular_graph_uniform():
    ring = make_graph(6, [(i, (i + 1) % 6) for i in range(6)])
    np.testing.assert_allclose(pagerank(ring), np.full(6, 1 / 6), atol=1e-12)


def test_pagerank_single_edge():
    np.testing.assert_allclose(pagerank(make_graph(2, [(0, 1)])), [0.5, 0.5], atol=1e-12)


def test_pagerank_matches_dense_oracle(kernel_backend):
    rng = np.random.default_rng(7)
    g = random_graph(50, 0.08, rng)
    pr = pagerank(g)
    assert np.max(np.abs(pr - dense_pagerank(g))) < 1e-8
    assert abs(pr.sum() - 1) < 1e-10 and np.all(pr >= 0)


def test_pagerank_nonconvergence_warns():
    g = random_graph(20, 0.2, np.random.default_rng(0))
    with pytest.warns(PageRankWarning):
        pr = pagerank(g, max_iter=2)
    assert abs(pr.sum() - 1) < 1e-10


def test_pagerank_rejects_bad_damping():
    with pytest.raises(ValueError):
        pagerank(make_graph(2), damping=1.0)
