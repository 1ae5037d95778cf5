"""Seeded k-means and the cluster-distance difficulty score."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True, eq=False)
class KMeansModel:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    k: int
    seed: int
    n_iter: int = 0
    inertia_trace: tuple = field(default=())

    def to_json(self) -> str:
        return json.dumps({
            "k": self.k, "seed": self.seed, "inertia": self.inertia, "n_iter": self.n_iter,
            "centers": self.centers.tolist(), "assignments": self.assignments.tolist(),
            "inertia_trace": list(self.inertia_trace),
        })

    @classmethod
    def from_json(cls, text: str) -> "KMeansModel":
        obj = json.loads(text)
        return cls(np.array(obj["centers"], dtype=np.float64), np.array(obj["assignments"], dtype=np.int64),
                   float(obj["inertia"]), int(obj["k"]), int(obj["seed"]), int(obj["n_iter"]),
                   tuple(obj["inertia_trace"]))


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def _kmeanspp(x, k, rng):
    n = len(x)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    _, d2 = kernels.nearest_center(x, x[chosen[:1]])
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
            # roundoff can land on a zero-distance point; step to a positive one
            if d2[idx] == 0:
                idx = int(np.flatnonzero(d2 > 0)[0])
        else:
            free = np.setdiff1d(np.arange(n), chosen[:c])
            idx = int(free[rng.integers(len(free))])
        chosen[c] = idx
        _, new = kernels.nearest_center(x, x[idx:idx + 1])
        np.minimum(d2, new, out=d2)
    return x[chosen].copy()


def _lloyd(x, k, rng, max_iter):
    centers = _kmeanspp(x, k, rng)
    labels, d2 = kernels.nearest_center(x, centers)
    labels, d2 = _fix_empty(x, centers, labels, d2, k)
    trace = [float(d2.sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        sums, counts = kernels.cluster_sums(x, labels, k)
        centers = sums / counts[:, None]
        new_labels, d2 = kernels.nearest_center(x, centers)
        new_labels, d2 = _fix_empty(x, centers, new_labels, d2, k)
        trace.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    # final centers are the means of the final assignment
    sums, counts = kernels.cluster_sums(x, labels, k)
    centers = sums / counts[:, None]
    inertia = float(((x - centers[labels]) ** 2).sum())
    return centers, labels, inertia, n_iter, tuple(trace)


def kmeans(features, k: int, seed: int = 0, max_iter: int = 100, normalize: bool = False,
           n_init: int = 1) -> KMeansModel:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when assignments no longer change or after ``max_iter`` updates.
    A cluster that empties is re-seeded at the point farthest from its
    current center, which keeps the inertia trace non-increasing. With
    ``n_init > 1`` the restarts share one seeded stream and the lowest
    inertia wins (earliest on ties).
    """
    x = np.asarray(features, dtype=np.float64)
    if normalize:
        x = l2_normalize_rows(x)
    n = len(x)
    if k <= 0:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    if n_init < 1:
        raise ValueError("n_init must be positive")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite entries")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(x, k, rng, max_iter)
        if best is None or run[2] < best[2]:
            best = run
    centers, labels, inertia, n_iter, trace = best
    return KMeansModel(centers, labels, inertia, k, seed, n_iter, trace)


def _fix_empty(x, centers, labels, d2, k):
    counts = np.bincount(labels, minlength=k)
    if counts.min() > 0:
        return labels, d2
    labels = labels.copy()
    d2 = d2.copy()
    for c in np.flatnonzero(counts == 0):
        # farthest point from its own center, taken from a cluster that can spare it
        order = np.argsort(-d2, kind="stable")
        counts = np.bincount(labels, minlength=k)
        for i in order:
            if counts[labels[i]] > 1:
                break
        centers[c] = x[i]
        labels[i] = c
        d2[i] = 0.0
    return labels, d2


def nearest_center_distance(features, centers) -> np.ndarray:
    _, d2 = kernels.nearest_center(np.asarray(features, dtype=np.float64), centers)
    return np.sqrt(np.maximum(d2, 0.0))


def c_density(features, model: KMeansModel) -> np.ndarray:
    """``1 / (1 + distance to the nearest center)`` per node.

    The nearest center is re-evaluated here rather than read from the
    training assignment.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.centers.shape[1]:
        raise ValueError(f"feature dim {x.shape[-1]} does not match model dim {model.centers.shape[1]}")
    return 1.0 / (1.0 + nearest_center_distance(x, model.centers))


def c_density_scores(features, n_clusters: int, seed: int = 0, normalize: bool = False) -> np.ndarray:
    """Fit k-means with ``n_clusters`` and return the C-Density of every node."""
    x = np.asarray(features, dtype=np.float64)
    if normalize:
        x = l2_normalize_rows(x)
    return c_density(x, kmeans(x, n_clusters, seed=seed))
