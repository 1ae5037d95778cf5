"""Post-filtering of annotated nodes by confidence, label diversity and
cluster density."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .selection import rank_percentile


@dataclass
class FilterConfig:
    beta0: float = 1.0
    beta1: float = 1.0
    beta2: float = 1.0
    target_size: int | None = None
    keep_fraction: float = 0.75
    # "prose": small entropy change => protected; "literal": percentile of the raw change
    coe_orientation: str = "prose"

    def validate(self):
        if min(self.beta0, self.beta1, self.beta2) < 0 or self.beta0 + self.beta1 + self.beta2 <= 0:
            raise ValueError("betas must be non-negative with a positive sum")
        if self.coe_orientation not in ("prose", "literal"):
            raise ValueError("coe_orientation must be 'prose' or 'literal'")
        if self.target_size is not None and self.target_size <= 0:
            raise ValueError("target_size must be positive")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must lie in (0, 1]")

    def resolve_target(self, size: int) -> int:
        if self.target_size is not None:
            return self.target_size
        return math.ceil(self.keep_fraction * size)


def label_counts(labels, n_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)


def shannon_entropy(counts) -> float:
    """Entropy in nats of the label multiset given by per-class ``counts``."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total < 1:
        raise ValueError("entropy of an empty multiset")
    p = c[c > 0] / total
    return float(-(p * np.log(p)).sum())


def _xlogx(n):
    return n * math.log(n) if n > 0 else 0.0


def coe(counts, label: int) -> float:
    """Entropy change from removing one node of ``label`` from the multiset.

    Uses ``H = ln N - (1/N) * sum n_c ln n_c`` so only the affected class
    term is recomputed.
    """
    c = np.asarray(counts, dtype=np.int64)
    total = int(c.sum())
    if total < 2:
        raise ValueError("need at least two nodes to evaluate a removal")
    n_c = int(c[label])
    if n_c == 0:
        raise ValueError(f"label {label} has no members")
    s = sum(_xlogx(int(v)) for v in c)
    before = math.log(total) - s / total
    s_after = s - _xlogx(n_c) + _xlogx(n_c - 1)
    after = math.log(total - 1) - s_after / (total - 1)
    return after - before


def coe_all(counts, labels) -> np.ndarray:
    """Vectorised :func:`coe` for every node label in ``labels``."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total < 2:
        raise ValueError("need at least two nodes to evaluate a removal")
    with np.errstate(divide="ignore", invalid="ignore"):
        xl = np.where(c > 0, c * np.log(np.where(c > 0, c, 1.0)), 0.0)
        cm = c - 1
        xl_m = np.where(cm > 0, cm * np.log(np.where(cm > 0, cm, 1.0)), 0.0)
    s = xl.sum()
    before = math.log(total) - s / total
    lab = np.asarray(labels, dtype=np.int64)
    s_after = s - xl[lab] + xl_m[lab]
    return (math.log(total - 1) - s_after / (total - 1)) - before


def post_filter(selected_nodes, labels, confidences, cdensity, config: FilterConfig, n_classes: int | None = None):
    """Iteratively drop the node with the smallest filter score.

    ``labels``, ``confidences`` and ``cdensity`` are aligned with
    ``selected_nodes`` (abstained nodes must already be removed). Each round
    recomputes COE and all three rank percentiles over the remaining set.
    Ties on the score go to the lowest confidence, then the lowest node index.

    Returns ``(survivors, removal_log)`` with survivors in input order.
    """
    config.validate()
    nodes = np.asarray(selected_nodes, dtype=np.int64)
    lab = np.asarray(labels, dtype=np.int64)
    conf = np.asarray(confidences, dtype=np.float64)
    dens = np.asarray(cdensity, dtype=np.float64)
    if not (len(nodes) == len(lab) == len(conf) == len(dens)):
        raise ValueError("selected nodes, labels, confidences and cdensity must align")
    target = config.resolve_target(len(nodes))
    if not 0 < target <= len(nodes):
        raise ValueError(f"target_size {target} must lie in [1, {len(nodes)}]")
    k = n_classes if n_classes is not None else (int(lab.max()) + 1 if len(lab) else 1)
    counts = label_counts(lab, k)
    alive = np.arange(len(nodes))
    removal_log = []
    sign = -1.0 if config.coe_orientation == "prose" else 1.0
    while len(alive) > target:
        a_lab = lab[alive]
        r_conf = rank_percentile(conf[alive])
        r_coe = rank_percentile(sign * coe_all(counts, a_lab))
        r_den = rank_percentile(dens[alive])
        score = config.beta0 * r_conf + config.beta1 * r_coe + config.beta2 * r_den
        pick = np.lexsort((nodes[alive], conf[alive], score))[0]
        victim = alive[pick]
        removal_log.append({"node": int(nodes[victim]), "f_filter": float(score[pick]),
                            "r_conf": float(r_conf[pick]), "r_coe": float(r_coe[pick]),
                            "r_cdensity": float(r_den[pick])})
        counts[lab[victim]] -= 1
        alive = np.delete(alive, pick)
    return nodes[alive], removal_log
