"""Active node selection: score functions, rank aggregation and top-B picks."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import clustering
from .graph import TextAttributedGraph, degrees, normalized_adjacency, pagerank, propagate

METHODS = ("random", "density", "degree", "pagerank", "age", "featprop")


@dataclass(frozen=True, eq=False)
class ScoreVector:
    values: np.ndarray
    method: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("scores must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite score in {self.method}")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass
class SelectionConfig:
    method: str = "featprop"
    budget: int | None = None
    difficulty_aware: bool = False
    alpha0: float = 1.0
    alpha1: float = 1.0
    age_gamma: float = 0.5
    featprop_hops: int = 2
    cdensity_clusters: int | None = None
    seed: int = 0

    def validate(self, node_count: int | None = None):
        if self.method not in METHODS:
            raise ValueError(f"unknown selection method {self.method!r}; choose from {METHODS}")
        if self.budget is not None and self.budget <= 0:
            raise ValueError("budget must be positive")
        if node_count is not None and self.budget is not None and self.budget > node_count:
            raise ValueError(f"budget {self.budget} exceeds node count {node_count}")
        if self.alpha0 < 0 or self.alpha1 < 0 or self.alpha0 + self.alpha1 <= 0:
            raise ValueError("alpha0, alpha1 must be non-negative with a positive sum")
        if not 0.0 <= self.age_gamma <= 1.0:
            raise ValueError("age_gamma must lie in [0, 1]")
        if self.featprop_hops < 0:
            raise ValueError("featprop_hops must be non-negative")


def rank_percentile(scores) -> np.ndarray:
    """Percentile of each score in the high-to-low order, oriented so the
    highest score maps to 1.0 and the lowest to 0.0. Tied scores share the
    mean of the positions they occupy."""
    v = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    n = len(v)
    if n == 0:
        raise ValueError("cannot rank an empty score vector")
    if n == 1:
        return np.ones(1)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    # ascending 0-based positions, averaged across tie blocks
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], n]
    mean_pos = (starts + ends - 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(mean_pos, ends - starts)
    return ranks / (n - 1)


def select_top_b(scores, budget: int, seed: int = 0) -> np.ndarray:
    """Indices of the ``budget`` highest scores; ties broken by a seeded shuffle."""
    v = scores.values if isinstance(scores, ScoreVector) else np.asarray(scores, dtype=np.float64)
    if not 0 < budget <= len(v):
        raise ValueError(f"budget {budget} must lie in [1, {len(v)}]")
    shuffle = np.random.default_rng(seed).permutation(len(v))
    order = np.lexsort((np.arange(len(v)), shuffle, -v))
    return order[:budget]


def select_random(node_count: int, budget: int, seed: int = 0) -> np.ndarray:
    """Uniform sample without replacement: the first ``budget`` entries of
    ``default_rng(seed).permutation(node_count)``."""
    if not 0 < budget <= node_count:
        raise ValueError(f"budget {budget} must lie in [1, {node_count}]")
    return np.random.default_rng(seed).permutation(node_count)[:budget]


def score_density(graph: TextAttributedGraph, budget: int, seed: int = 0) -> ScoreVector:
    model = clustering.kmeans(graph.features, budget, seed=seed)
    return ScoreVector(clustering.c_density(graph.features, model), "density")


def score_cdensity(graph: TextAttributedGraph, n_clusters: int | None = None, seed: int = 0) -> ScoreVector:
    k = n_clusters or graph.num_classes
    return ScoreVector(clustering.c_density_scores(graph.features, k, seed=seed), "c_density")


def score_degree(graph: TextAttributedGraph) -> ScoreVector:
    return ScoreVector(degrees(graph).astype(np.float64), "degree")


def score_pagerank(graph: TextAttributedGraph, damping: float = 0.85) -> ScoreVector:
    return ScoreVector(pagerank(graph, damping=damping), "pagerank")


def age_density(graph: TextAttributedGraph, hops: int = 2, seed: int = 0) -> np.ndarray:
    """Density term of AGE: inverse distance to the nearest of C centers,
    computed on ``hops``-step propagated features."""
    agg = propagate(graph.features, normalized_adjacency(graph), hops)
    model = clustering.kmeans(agg, graph.num_classes, seed=seed)
    return clustering.c_density(agg, model)


def score_age(graph: TextAttributedGraph, gamma: float = 0.5, seed: int = 0, hops: int = 2) -> ScoreVector:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    dens = rank_percentile(age_density(graph, hops, seed))
    pr = rank_percentile(pagerank(graph))
    return ScoreVector(gamma * dens + (1.0 - gamma) * pr, "age")


FEATPROP_RESTARTS = 10


def _featprop_clusters(graph, budget, hops, seed):
    agg = propagate(graph.features, normalized_adjacency(graph), hops)
    return agg, clustering.kmeans(agg, budget, seed=seed, n_init=FEATPROP_RESTARTS)


def snap_to_medoids(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """For each center in order, the nearest point not already taken."""
    taken = np.zeros(len(points), dtype=bool)
    out = np.empty(len(centers), dtype=np.int64)
    for c, center in enumerate(centers):
        d = np.sqrt(((points - center) ** 2).sum(axis=1))
        d[taken] = np.inf
        i = int(np.argmin(d))
        taken[i] = True
        out[c] = i
    return out


def select_featprop(graph: TextAttributedGraph, budget: int, hops: int = 2, seed: int = 0) -> np.ndarray:
    """k-means with ``k = budget`` on propagated features, then one real node
    per cluster (nearest to its center, deduplicated)."""
    if not 0 < budget <= graph.node_count:
        raise ValueError(f"budget {budget} must lie in [1, {graph.node_count}]")
    agg, model = _featprop_clusters(graph, budget, hops, seed)
    return snap_to_medoids(agg, model.centers)


def score_featprop(graph: TextAttributedGraph, budget: int, hops: int = 2, seed: int = 0) -> ScoreVector:
    """Per-node FeatProp score for rank aggregation: inverse distance to the
    nearest of the ``budget`` centers in propagated space."""
    agg, model = _featprop_clusters(graph, budget, hops, seed)
    return ScoreVector(clustering.c_density(agg, model), "featprop")


def apply_difficulty_aware(base: ScoreVector, cdensity: ScoreVector, alpha0: float = 1.0,
                           alpha1: float = 1.0) -> ScoreVector:
    if len(base) != len(cdensity):
        raise ValueError(f"length mismatch: {len(base)} vs {len(cdensity)}")
    combined = alpha0 * rank_percentile(base) + alpha1 * rank_percentile(cdensity)
    return ScoreVector(combined, f"da-{base.method}")


def base_scores(graph: TextAttributedGraph, config: SelectionConfig, budget: int) -> ScoreVector:
    m = config.method
    if m == "density":
        return score_density(graph, budget, seed=config.seed)
    if m == "degree":
        return score_degree(graph)
    if m == "pagerank":
        return score_pagerank(graph)
    if m == "age":
        return score_age(graph, config.age_gamma, seed=config.seed)
    if m == "featprop":
        return score_featprop(graph, budget, config.featprop_hops, seed=config.seed)
    if m == "random":
        # a seeded random score keeps DA-Random well defined
        return ScoreVector(np.random.default_rng(config.seed).random(graph.node_count), "random")
    raise ValueError(f"unknown selection method {m!r}")


def select_nodes(graph: TextAttributedGraph, config: SelectionConfig) -> np.ndarray:
    """Run the configured strategy and return ``budget`` distinct node indices."""
    budget = config.budget or 20 * graph.num_classes
    SelectionConfig(**{**asdict(config), "budget": budget}).validate(graph.node_count)
    if not config.difficulty_aware:
        if config.method == "random":
            return select_random(graph.node_count, budget, config.seed)
        if config.method == "featprop":
            return select_featprop(graph, budget, config.featprop_hops, config.seed)
        return select_top_b(base_scores(graph, config, budget), budget, config.seed)
    base = base_scores(graph, config, budget)
    cd = score_cdensity(graph, config.cdensity_clusters, seed=config.seed)
    return select_top_b(apply_difficulty_aware(base, cd, config.alpha0, config.alpha1), budget, config.seed)


def write_selection(path, config: SelectionConfig, nodes, budget: int | None = None):
    obj = {"method": ("da-" if config.difficulty_aware else "") + config.method,
           "budget": int(budget if budget is not None else len(nodes)), "seed": config.seed,
           "alpha0": config.alpha0, "alpha1": config.alpha1, "node_ids": [int(i) for i in nodes]}
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True), encoding="utf-8")
    return obj


def read_selection(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
