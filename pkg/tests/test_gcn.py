import math

import numpy as np
import pytest

from conftest import dense_adjacency, make_graph, random_graph
from labelfree.gcn import (GcnParams, NonFiniteError, TrainConfig, forward, gradients, load_checkpoint, loss,
                           predict, predict_proba, save_checkpoint, train)
from labelfree.graph import SparseNormalizedAdjacency, normalized_adjacency


def dense_norm(g):
    a = dense_adjacency(g) + np.eye(g.node_count)
    d = a.sum(1) ** -0.5
    return d[:, None] * a * d[None, :]


def dense_forward(a_hat, x, p, mask=None):
    h = np.maximum(a_hat @ x @ p.W1, 0)
    if mask is not None:
        h = h * mask
    return a_hat @ h @ p.W2


def small_instance(seed, n=12, d=5, h=4, c=3):
    rng = np.random.default_rng(seed)
    g = random_graph(n, 0.3, rng, dim=d, classes=tuple("abc"[:c]))
    p = GcnParams(rng.normal(size=(d, h)), rng.normal(size=(h, c)))
    idx = rng.choice(n, size=n // 2, replace=False)
    y = rng.integers(c, size=len(idx))
    return g, normalized_adjacency(g), p, idx, y


# ---------------------------------------------------------------- forward

def test_zero_weights_zero_logits():
    g, adj, p, _, _ = small_instance(0)
    z = forward(adj, g.features, GcnParams(np.zeros_like(p.W1), np.zeros_like(p.W2)))
    assert np.all(z == 0)


def test_identity_adjacency_matches_product():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    p = GcnParams(np.eye(2), np.array([[1.0, 0.0], [0.0, 2.0]]))
    z = forward(SparseNormalizedAdjacency.identity(2), x, p)
    np.testing.assert_allclose(z, np.maximum(x, 0) @ p.W2, atol=0)


def test_path_graph_dense_oracle(kernel_backend):
    g = make_graph(3, [(0, 1), (1, 2)], np.array([[1.0, 0.2], [0.3, -1.0], [2.0, 0.5]]))
    rng = np.random.default_rng(1)
    p = GcnParams(rng.normal(size=(2, 4)), rng.normal(size=(4, 2)))
    np.testing.assert_allclose(forward(normalized_adjacency(g), g.features, p),
                               dense_forward(dense_norm(g), g.features, p), atol=1e-12)


def test_forward_with_mask_dense_oracle():
    g, adj, p, _, _ = small_instance(2)
    mask = (np.random.default_rng(3).random((g.node_count, 4)) < 0.5) / 0.5
    np.testing.assert_allclose(forward(adj, g.features, p, mask), dense_forward(dense_norm(g), g.features, p, mask),
                               atol=1e-12)


def test_forward_dimension_errors():
    g, adj, p, _, _ = small_instance(4)
    with pytest.raises(ValueError):
        forward(adj, g.features[:, :3], p)
    with pytest.raises(ValueError):
        forward(adj, g.features[:5], p)
    with pytest.raises(ValueError):
        GcnParams(np.zeros((5, 4)), np.zeros((3, 2)))


def test_non_finite_reports_layer():
    g, adj, p, _, _ = small_instance(5)
    x = g.features.copy()
    x[0, 0] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError, match="layer1"):
        forward(adj, x, p)


# ---------------------------------------------------------------- loss

def test_uniform_logits_give_log_c():
    z = np.zeros((6, 4))
    assert loss(z, [0, 2, 5], [1, 3, 0]) == pytest.approx(math.log(4))
    p = GcnParams(np.ones((2, 2)), np.ones((2, 4)))
    assert loss(z, [0], [1], params=p, weight_decay=0.1) == pytest.approx(math.log(4) + 0.05 * 12)


def test_equal_weights_equal_plain():
    z = np.random.default_rng(6).normal(size=(10, 3))
    idx, y = np.arange(0, 10, 2), np.array([0, 1, 2, 0, 1])
    assert abs(loss(z, idx, y, weights=np.full(5, 0.7)) - loss(z, idx, y)) < 1e-12


def test_weighted_four_node_oracle():
    z = np.random.default_rng(7).normal(size=(4, 3))
    y = np.array([2, 0, 1, 1])
    w = np.array([1, 0.5, 0.5, 1])
    ce = [-(z[i, y[i]] - math.log(sum(math.exp(v) for v in z[i]))) for i in range(4)]
    assert loss(z, np.arange(4), y, weights=w) == pytest.approx(sum(a * b for a, b in zip(w, ce)) / w.sum(),
                                                                abs=1e-14)


def test_loss_errors():
    z = np.zeros((3, 2))
    with pytest.raises(ValueError):
        loss(z, [], [])
    with pytest.raises(ValueError):
        loss(z, [0, 1], [0, 1], weights=[0.0, 0.0])
    with pytest.raises(ValueError):
        loss(z, [0, 1], [0, 1], weights=[-1.0, 2.0])


def test_loss_permutation_invariant():
    z = np.random.default_rng(8).normal(size=(6, 4))
    y = np.array([0, 3, 1, 2, 2, 0])
    perm = np.array([2, 0, 3, 1])
    zp = np.empty_like(z)
    zp[:, perm] = z
    assert loss(zp, np.arange(6), perm[y]) == pytest.approx(loss(z, np.arange(6), y), abs=1e-14)


# ---------------------------------------------------------------- gradients

def numeric_grad(f, w, h=1e-5):
    g = np.zeros_like(w)
    for i in np.ndindex(w.shape):
        up, dn = w.copy(), w.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("weighted", [False, True])
def test_gradients_match_finite_differences(seed, weighted):
    g, adj, p, idx, y = small_instance(seed, n=10 + seed, d=3 + seed % 4)
    w = np.random.default_rng(seed).uniform(0.2, 1.0, size=len(idx)) if weighted else None
    decay = 0.01 * seed
    dW1, dW2, _ = gradients(adj, g.features, p, idx, y, w, weight_decay=decay)

    def f1(m):
        q = GcnParams(m, p.W2)
        return loss(forward(adj, g.features, q), idx, y, w, q, decay)

    def f2(m):
        q = GcnParams(p.W1, m)
        return loss(forward(adj, g.features, q), idx, y, w, q, decay)

    for analytic, numeric in ((dW1, numeric_grad(f1, np.array(p.W1))), (dW2, numeric_grad(f2, np.array(p.W2)))):
        scale = np.maximum(np.abs(numeric), 1e-3)
        assert np.max(np.abs(analytic - numeric) / scale) < 1e-4


def test_gradient_with_dropout_mask_matches_fd():
    g, adj, p, idx, y = small_instance(11)
    mask = (np.random.default_rng(0).random((g.node_count, 4)) < 0.6) / 0.6
    dW1, _, _ = gradients(adj, g.features, p, idx, y, dropout_mask=mask)
    f = lambda m: loss(forward(adj, g.features, GcnParams(m, p.W2), mask), idx, y)
    np.testing.assert_allclose(dW1, numeric_grad(f, np.array(p.W1)), rtol=1e-4, atol=1e-7)


def test_decay_gradient_alone():
    g, adj, p, idx, y = small_instance(12)
    base1, base2, _ = gradients(adj, g.features, p, idx, y)
    dec1, dec2, _ = gradients(adj, g.features, p, idx, y, weight_decay=0.3)
    np.testing.assert_allclose(dec1 - base1, 0.3 * p.W1, atol=1e-12)
    np.testing.assert_allclose(dec2 - base2, 0.3 * p.W2, atol=1e-12)


def test_near_zero_gradient_at_separating_optimum():
    x = np.eye(2)
    p = GcnParams(np.eye(2) * 60, np.eye(2) * 60)
    dW1, dW2, value = gradients(SparseNormalizedAdjacency.identity(2), x, p, [0, 1], [0, 1])
    assert value < 1e-12
    assert np.linalg.norm(dW1) + np.linalg.norm(dW2) < 1e-8


# ---------------------------------------------------------------- train / predict

def two_blob_graph(n=40, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = np.stack([np.where(y == 0, -2.0, 2.0), np.zeros(n)], axis=1) + 0.3 * rng.normal(size=(n, 2))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if y[i] == y[j] and rng.random() < 0.15]
    return make_graph(n, edges, x, gold=y)


def test_lr_zero_keeps_init():
    g = two_blob_graph()
    adj = normalized_adjacency(g)
    cfg = TrainConfig(learning_rate=0.0, epochs=1, hidden_dim=8, seed=3)
    params, hist = train(g, adj, [0, 1], [0, 1], config=cfg)
    init = GcnParams.glorot(2, 8, 2, np.random.default_rng(3))
    np.testing.assert_array_equal(params.W1, init.W1)
    np.testing.assert_array_equal(params.W2, init.W2)
    assert len(hist) == 1


def test_separable_toy_fits(kernel_backend):
    g = two_blob_graph()
    adj = normalized_adjacency(g)
    idx = np.arange(0, 40, 3)
    params, hist = train(g, adj, idx, g.gold_labels[idx], config=TrainConfig(dropout_rate=0.0, hidden_dim=16))
    assert len(hist) == 30 and hist.train_accuracy[-1] == 1.0
    assert np.all(predict(params, adj, g.features) == g.gold_labels)


def test_train_deterministic():
    g = two_blob_graph(seed=1)
    adj = normalized_adjacency(g)
    idx = np.arange(10)
    cfg = TrainConfig(seed=9, loss_kind="weighted_ce")
    w = np.linspace(0.3, 1.0, 10)
    a = train(g, adj, idx, g.gold_labels[idx], w, cfg, test_indices=np.arange(10, 40))
    b = train(g, adj, idx, g.gold_labels[idx], w, cfg, test_indices=np.arange(10, 40))
    assert a[1].loss == b[1].loss and a[1].test_accuracy == b[1].test_accuracy
    np.testing.assert_array_equal(a[0].W1, b[0].W1)


def test_weights_ignored_for_plain_ce():
    g = two_blob_graph(seed=2)
    adj = normalized_adjacency(g)
    idx = np.arange(8)
    a = train(g, adj, idx, g.gold_labels[idx], np.linspace(0.1, 1, 8), TrainConfig())[1].loss
    b = train(g, adj, idx, g.gold_labels[idx], None, TrainConfig())[1].loss
    assert a == b


def test_train_input_errors():
    g = two_blob_graph()
    adj = normalized_adjacency(g)
    with pytest.raises(ValueError):
        train(g, adj, [], [])
    with pytest.raises(ValueError):
        train(g, adj, [0], [5])
    with pytest.raises(ValueError):
        TrainConfig(loss_kind="focal").validate()


def test_divergence_aborts_with_epoch(monkeypatch):
    import labelfree.gcn as gcn_mod
    g = two_blob_graph()
    real = gcn_mod.gradients
    calls = []

    def flaky(*a, **k):
        calls.append(1)
        d1, d2, v = real(*a, **k)
        return d1, d2, (np.nan if len(calls) == 2 else v)

    monkeypatch.setattr(gcn_mod, "gradients", flaky)
    with pytest.raises(NonFiniteError, match="epoch 2"):
        train(g, normalized_adjacency(g), [0, 1], [0, 1])


def test_predict_ties_and_shift_invariance():
    g, adj, p, _, _ = small_instance(13)
    zero = GcnParams(np.zeros_like(p.W1), np.zeros_like(p.W2))
    assert np.all(predict(zero, adj, g.features) == 0)
    z = forward(adj, g.features, p)
    assert np.all(np.argmax(z + 7.5, axis=1) == predict(p, adj, g.features))
    np.testing.assert_allclose(predict_proba(p, adj, g.features).sum(1), 1.0, atol=1e-10)


def test_checkpoint_round_trip(tmp_path):
    _, _, p, _, _ = small_instance(14)
    save_checkpoint(tmp_path / "m.gcn", p, 5, "deadbeef")
    q, header = load_checkpoint(tmp_path / "m.gcn")
    np.testing.assert_array_equal(q.W1, p.W1)
    np.testing.assert_array_equal(q.W2, p.W2)
    assert header["seed"] == 5 and header["config_hash"] == "deadbeef"
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")


def test_history_csv(tmp_path):
    g = two_blob_graph()
    _, hist = train(g, normalized_adjacency(g), [0, 1], [0, 1], config=TrainConfig(epochs=3),
                    test_indices=np.arange(2, 40))
    hist.to_csv(tmp_path / "h.csv", "# config_hash=abc")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=abc" and lines[1].startswith("epoch,loss") and len(lines) == 5
