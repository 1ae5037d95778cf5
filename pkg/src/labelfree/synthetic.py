"""Synthetic text-attributed graphs: Gaussian feature blobs on a homophilous
stochastic block graph, with placeholder texts of realistic length."""
from __future__ import annotations

import numpy as np

from .graph import TextAttributedGraph

CORA_CLASSES = ("Rule Learning", "Neural Networks", "Case Based", "Genetic Algorithms",
                "Theory", "Reinforcement Learning", "Probabilistic Methods")
# class sizes of the public Cora release
CORA_CLASS_SIZES = (180, 818, 298, 418, 351, 217, 426)

_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "ta", "vo", "si", "de", "pa", "qu", "zo", "be", "fi")


def _vocabulary(rng, size):
    words = set()
    while len(words) < size:
        k = rng.integers(2, 5)
        words.add("".join(rng.choice(_SYLLABLES, size=k)))
    return sorted(words)


def _texts(rng, labels, n_classes, text_chars):
    vocab = _vocabulary(rng, 60 * n_classes)
    per_class = [vocab[c::n_classes] for c in range(n_classes)]
    out = []
    for i, c in enumerate(labels):
        words = []
        length = 0
        target = int(text_chars * rng.uniform(0.6, 1.4))
        while length < target:
            pool = per_class[c] if rng.random() < 0.6 else vocab
            w = pool[rng.integers(len(pool))]
            words.append(w)
            length += len(w) + 1
        out.append(f"Title: document {i}. Abstract: " + " ".join(words))
    return out


def _sbm_edges(rng, labels, n_edges, homophily):
    n = len(labels)
    members = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    seen = set()
    out = []
    while len(out) < n_edges:
        batch = 2 * (n_edges - len(out)) + 16
        u = rng.integers(n, size=batch)
        same = rng.random(batch) < homophily
        v = rng.integers(n, size=batch)
        for a, s, b in zip(u.tolist(), same.tolist(), v.tolist()):
            if s:
                pool = members[labels[a]]
                b = int(pool[rng.integers(len(pool))])
            if a == b:
                continue
            key = (a, b) if a < b else (b, a)
            if key in seen:
                continue
            seen.add(key)
            out.append(key)
            if len(out) == n_edges:
                break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def make_synthetic_tag(n_nodes=2000, n_classes=8, feature_dim=8, n_edges=None, homophily=0.8,
                       center_scale=2.0, noise_scale=0.5, radius_sigma=0.5, class_sizes=None,
                       class_names=None, text_chars=300, seed=0) -> TextAttributedGraph:
    """Build a random TAG whose features form one Gaussian blob per class.

    Each node's offset from its class center is scaled by a log-normal
    factor (``radius_sigma``) so nodes vary in how central they are.
    ``n_edges`` defaults to two edges per node.
    """
    rng = np.random.default_rng(seed)
    if class_sizes is None:
        weights = np.full(n_classes, 1.0 / n_classes)
    else:
        weights = np.asarray(class_sizes, dtype=float)
        weights = weights / weights.sum()
    counts = np.floor(weights * n_nodes).astype(int)
    counts[: n_nodes - counts.sum()] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    rng.shuffle(labels)

    centers = rng.normal(scale=center_scale, size=(n_classes, feature_dim))
    radius = noise_scale * rng.lognormal(0.0, radius_sigma, size=n_nodes)
    feats = centers[labels] + radius[:, None] * rng.normal(size=(n_nodes, feature_dim))

    if n_edges is None:
        n_edges = 2 * n_nodes
    edges = _sbm_edges(rng, labels, n_edges, homophily)
    names = class_names or tuple(f"class {chr(ord('a') + c)}" if c < 26 else f"class {c}"
                                 for c in range(n_classes))
    return TextAttributedGraph(n_nodes, edges, feats, names, texts=_texts(rng, labels, n_classes, text_chars),
                               gold_labels=labels, provenance=f"synthetic(seed={seed})")


def make_cora_like(seed=0, feature_dim=16, homophily=0.81, center_scale=0.35, noise_scale=1.0,
                   text_chars=1100) -> TextAttributedGraph:
    """A surrogate with Cora's node/edge/class counts and class imbalance."""
    return make_synthetic_tag(n_nodes=2708, n_classes=7, feature_dim=feature_dim, n_edges=5429,
                              homophily=homophily, center_scale=center_scale, noise_scale=noise_scale,
                              class_sizes=CORA_CLASS_SIZES, class_names=CORA_CLASSES,
                              text_chars=text_chars, seed=seed)
