"""Two-layer GCN, ``logits = A relu(A X W1) W2``, trained full-batch with Adam
on (optionally confidence-weighted) cross-entropy. Gradients are analytic."""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import SparseNormalizedAdjacency

CHECKPOINT_MAGIC = b"LFGCN1\n"


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    hidden_dim: int = 64
    dropout_rate: float = 0.5
    epochs: int = 30
    loss_kind: str = "ce"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")
        if self.loss_kind not in ("ce", "weighted_ce"):
            raise ValueError("loss_kind must be 'ce' or 'weighted_ce'")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class GcnParams:
    W1: np.ndarray
    W2: np.ndarray

    def __post_init__(self):
        w1 = np.array(self.W1, dtype=np.float64)
        w2 = np.array(self.W2, dtype=np.float64)
        if w1.ndim != 2 or w2.ndim != 2 or w1.shape[1] != w2.shape[0]:
            raise ValueError(f"inconsistent weight shapes {w1.shape}, {w2.shape}")
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise NonFiniteError("non-finite weights")
        w1.flags.writeable = False
        w2.flags.writeable = False
        object.__setattr__(self, "W1", w1)
        object.__setattr__(self, "W2", w2)

    @classmethod
    def glorot(cls, in_dim, hidden, out_dim, rng) -> "GcnParams":
        def g(a, b):
            lim = np.sqrt(6.0 / (a + b))
            return rng.uniform(-lim, lim, size=(a, b))
        return cls(g(in_dim, hidden), g(hidden, out_dim))


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def to_csv(self, path, header_line: str | None = None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_line:
                fh.write(header_line + "\n")
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "train_accuracy", "test_accuracy"])
            for i, loss in enumerate(self.loss):
                test = self.test_accuracy[i] if self.test_accuracy else ""
                w.writerow([i + 1, repr(loss), repr(self.train_accuracy[i]), repr(test) if test != "" else ""])


def _check(a, tag):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite values in {tag}")
    return a


def _forward_parts(adjacency, features, params, dropout_mask=None, propagated=None):
    if features.shape[0] != adjacency.dimension:
        raise ValueError(f"feature rows {features.shape[0]} != adjacency dimension {adjacency.dimension}")
    if features.shape[1] != params.W1.shape[0]:
        raise ValueError(f"feature dim {features.shape[1]} != W1 rows {params.W1.shape[0]}")
    ax = propagated if propagated is not None else adjacency.matmul(features)
    pre = _check(ax @ params.W1, "layer1")
    hidden = np.maximum(pre, 0.0)
    if dropout_mask is not None:
        hidden = hidden * dropout_mask
    ah = adjacency.matmul(hidden)
    logits = _check(ah @ params.W2, "layer2")
    return ax, pre, ah, logits


def forward(adjacency: SparseNormalizedAdjacency, features, params: GcnParams, dropout_mask=None) -> np.ndarray:
    """Logits (no softmax). ``dropout_mask`` multiplies the hidden layer and
    already includes the 1/(1-p) scaling."""
    return _forward_parts(adjacency, np.asarray(features, dtype=np.float64), params, dropout_mask)[3]


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def _node_weights(train_indices, weights):
    n = len(train_indices)
    if n == 0:
        raise ValueError("empty training set")
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError("weights must align with train_indices")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    return w / total


def loss(logits, train_indices, labels, weights=None, params: GcnParams | None = None,
         weight_decay: float = 0.0) -> float:
    """Mean (or weighted mean) cross-entropy over ``train_indices`` plus
    ``weight_decay / 2 * (|W1|^2 + |W2|^2)`` when ``params`` is given."""
    idx = np.asarray(train_indices, dtype=np.int64)
    w = _node_weights(idx, weights)
    lsm = log_softmax(np.asarray(logits)[idx])
    ce = -lsm[np.arange(len(idx)), np.asarray(labels, dtype=np.int64)]
    total = float((w * ce).sum())
    if params is not None and weight_decay:
        total += 0.5 * weight_decay * float((params.W1 ** 2).sum() + (params.W2 ** 2).sum())
    return total


def gradients(adjacency, features, params: GcnParams, train_indices, labels, weights=None,
              dropout_mask=None, weight_decay: float = 0.0, propagated=None):
    """Exact gradient of :func:`loss` (with decay) w.r.t. ``(W1, W2)``.

    Also returns the loss value: ``(dW1, dW2, loss_value)``.
    """
    x = np.asarray(features, dtype=np.float64)
    idx = np.asarray(train_indices, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    w = _node_weights(idx, weights)
    ax, pre, ah, logits = _forward_parts(adjacency, x, params, dropout_mask, propagated)
    lsm = log_softmax(logits[idx])
    value = float((w * -lsm[np.arange(len(idx)), y]).sum())
    d_logits_rows = np.exp(lsm)
    d_logits_rows[np.arange(len(idx)), y] -= 1.0
    d_logits_rows *= w[:, None]
    d_logits = np.zeros_like(logits)
    np.add.at(d_logits, idx, d_logits_rows)
    dW2 = ah.T @ d_logits
    d_hidden = adjacency.matmul(d_logits @ params.W2.T)  # adjacency is symmetric
    if dropout_mask is not None:
        d_hidden = d_hidden * dropout_mask
    d_pre = d_hidden * (pre > 0)
    dW1 = ax.T @ d_pre
    if weight_decay:
        dW1 = dW1 + weight_decay * params.W1
        dW2 = dW2 + weight_decay * params.W2
        value += 0.5 * weight_decay * float((params.W1 ** 2).sum() + (params.W2 ** 2).sum())
    return dW1, dW2, value


def predict_proba(params, adjacency, features) -> np.ndarray:
    return softmax(forward(adjacency, features, params))


def predict(params: GcnParams, adjacency, features) -> np.ndarray:
    """Argmax class per node with dropout off; ties go to the lowest index."""
    return np.argmax(forward(adjacency, features, params), axis=1)


def train(graph, adjacency, train_indices, labels, weights=None, config: TrainConfig | None = None,
          test_indices=None):
    """Train for exactly ``config.epochs`` Adam steps and return the final
    parameters with a per-epoch history (no early stopping).

    ``weights`` are used only when ``config.loss_kind == 'weighted_ce'``.
    Test accuracy is tracked when the graph has gold labels and
    ``test_indices`` is given.
    """
    config = config or TrainConfig()
    config.validate()
    idx = np.asarray(train_indices, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("empty training set")
    if len(y) != len(idx) or y.min() < 0 or y.max() >= graph.num_classes:
        raise ValueError("labels must align with train_indices and lie in [0, C)")
    w = weights if config.loss_kind == "weighted_ce" else None
    rng = np.random.default_rng(config.seed)
    x = graph.features
    params = GcnParams.glorot(graph.feature_dim, config.hidden_dim, graph.num_classes, rng)
    ax = adjacency.matmul(x)
    m = [np.zeros_like(params.W1), np.zeros_like(params.W2)]
    v = [np.zeros_like(params.W1), np.zeros_like(params.W2)]
    b1, b2 = config.adam_betas
    keep = 1.0 - config.dropout_rate
    history = TrainHistory()
    gold = graph.gold_labels
    test = None if test_indices is None or gold is None else np.asarray(test_indices, dtype=np.int64)
    w1, w2 = params.W1.copy(), params.W2.copy()
    for epoch in range(1, config.epochs + 1):
        mask = None
        if config.dropout_rate > 0:
            mask = (rng.random((graph.node_count, config.hidden_dim)) < keep) / keep
        try:
            g1, g2, value = gradients(adjacency, x, params, idx, y, w, mask, config.weight_decay, propagated=ax)
        except NonFiniteError as exc:
            raise NonFiniteError(f"{exc} at epoch {epoch}") from None
        if not np.isfinite(value):
            raise NonFiniteError(f"loss diverged at epoch {epoch}")
        history.loss.append(value)
        for i, (p, g) in enumerate(((w1, g1), (w2, g2))):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mhat = m[i] / (1 - b1 ** epoch)
            vhat = v[i] / (1 - b2 ** epoch)
            p -= config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)
        try:
            params = GcnParams(w1, w2)
        except NonFiniteError:
            raise NonFiniteError(f"parameters diverged at epoch {epoch}") from None
        pred = predict(params, adjacency, x)
        history.train_accuracy.append(float((pred[idx] == y).mean()))
        if test is not None and len(test):
            history.test_accuracy.append(float((pred[test] == gold[test]).mean()))
    return params, history


def save_checkpoint(path, params: GcnParams, seed: int, config_hash: str):
    header = json.dumps({"W1": list(params.W1.shape), "W2": list(params.W2.shape), "dtype": "<f8",
                         "seed": seed, "config_hash": config_hash}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(params.W1.astype("<f8").tobytes())
        fh.write(params.W2.astype("<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, header_dict)``."""
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a GCN checkpoint")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    header = json.loads(blob[off:off + hlen])
    off += hlen
    s1, s2 = tuple(header["W1"]), tuple(header["W2"])
    n1 = s1[0] * s1[1] * 8
    w1 = np.frombuffer(blob, dtype="<f8", count=s1[0] * s1[1], offset=off).reshape(s1)
    w2 = np.frombuffer(blob, dtype="<f8", count=s2[0] * s2[1], offset=off + n1).reshape(s2)
    return GcnParams(w1, w2), header
