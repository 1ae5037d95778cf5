"""Noisy-oracle stand-in for an LLM annotator.

Correctness probability rises linearly with a node's C-Density; wrong
answers follow a row-stochastic transition matrix; reported confidence is
(optionally) calibrated to the correctness probability.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .types import Annotation


@dataclass(frozen=True, eq=False)
class OracleNoiseModel:
    base_accuracy: float
    density_slope: float
    transition_matrix: np.ndarray
    confidence_calibration: float = 1.0
    seed: int = 0
    malformed_rate: float = 0.0
    # std of a per-node difficulty offset the features do not reveal
    difficulty_noise: float = 0.0

    def __post_init__(self):
        t = np.array(self.transition_matrix, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition matrix rows must be non-negative and sum to 1")
        if np.any(np.diag(t) != 0):
            raise ValueError("transition matrix diagonal must be 0 (wrong-class distribution)")
        if not 0.0 <= self.confidence_calibration <= 1.0:
            raise ValueError("confidence_calibration must lie in [0, 1]")
        if not 0.0 <= self.malformed_rate <= 1.0:
            raise ValueError("malformed_rate must lie in [0, 1]")
        if self.difficulty_noise < 0:
            raise ValueError("difficulty_noise must be non-negative")
        t.flags.writeable = False
        object.__setattr__(self, "transition_matrix", t)

    @property
    def num_classes(self) -> int:
        return self.transition_matrix.shape[0]

    def difficulty_offset(self, node_ids) -> np.ndarray:
        """Hidden per-node shift of the correctness probability, fixed per ``(seed, node)``."""
        ids = np.atleast_1d(np.asarray(node_ids, dtype=np.int64))
        if self.difficulty_noise == 0:
            return np.zeros(len(ids))
        return np.array([self.difficulty_noise * np.random.default_rng([self.seed, int(i), 3]).normal()
                         for i in ids])

    def correct_probability(self, cdensity, node_ids=None) -> np.ndarray:
        """``clamp(base + slope * cdensity [+ offset(node)], 0, 1)``."""
        p = self.base_accuracy + self.density_slope * np.asarray(cdensity, dtype=float)
        if node_ids is not None:
            p = p + self.difficulty_offset(node_ids).reshape(np.shape(p))
        return np.clip(p, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"base_accuracy": self.base_accuracy, "density_slope": self.density_slope,
                "transition_matrix": self.transition_matrix.tolist(),
                "confidence_calibration": self.confidence_calibration, "seed": self.seed,
                "malformed_rate": self.malformed_rate, "difficulty_noise": self.difficulty_noise}


def uniform_transition(n_classes: int) -> np.ndarray:
    t = np.full((n_classes, n_classes), 1.0 / (n_classes - 1))
    np.fill_diagonal(t, 0.0)
    return t


def confusable_transition(n_classes: int, focus: float = 0.6, seed: int = 0) -> np.ndarray:
    """Asymmetric wrong-class matrix: each row sends ``focus`` of its error
    mass to one confusable class and spreads the rest uniformly."""
    rng = np.random.default_rng(seed)
    t = np.zeros((n_classes, n_classes))
    for i in range(n_classes):
        others = [j for j in range(n_classes) if j != i]
        target = others[rng.integers(len(others))]
        for j in others:
            t[i, j] = (1.0 - focus) / len(others)
        t[i, target] += focus
    return t


def calibrate_base_accuracy(cdensity, density_slope: float, target: float, tol: float = 1e-10,
                            offsets=None) -> float:
    """Solve for the base accuracy giving mean correctness ``target`` over
    ``cdensity`` (bisection on the clamped linear model). ``offsets`` are
    the per-node hidden difficulty shifts, if any."""
    shift = density_slope * np.asarray(cdensity, dtype=float)
    if offsets is not None:
        shift = shift + np.asarray(offsets, dtype=float)
    span = float(np.abs(shift).max()) if shift.size else 0.0
    lo, hi = -1.0 - span, 1.0 + span
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(mid + shift, 0, 1).mean() < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def draw_answer(noise: OracleNoiseModel, gold: int, cdensity: float, node_id: int):
    """Deterministic per ``(noise.seed, node_id)``: returns the emitted label
    and its confidence in [0, 100]."""
    rng = np.random.default_rng([noise.seed, int(node_id), 0])
    p = float(noise.correct_probability(cdensity, node_id))
    u_correct, u_conf = rng.random(2)
    if u_correct < p:
        label = int(gold)
    else:
        label = int(rng.choice(noise.num_classes, p=noise.transition_matrix[gold]))
    lam = noise.confidence_calibration
    conf = 100.0 * (lam * p + (1.0 - lam) * u_conf)
    return label, float(min(100.0, max(0.0, conf)))


def simulated_annotate(graph, noise_model: OracleNoiseModel, cdensity_scores, node_id: int) -> Annotation:
    if graph.gold_labels is None:
        raise ValueError("the simulated annotator needs gold labels")
    label, conf = draw_answer(noise_model, graph.gold_labels[node_id], cdensity_scores[node_id], node_id)
    return Annotation(int(node_id), label, conf, (), "simulated", 1, True)


class SimulatedBackend:
    """Backend that answers annotation requests from :func:`draw_answer`.

    Replies are rendered as the JSON answer list a real model would return,
    so they travel the same parse/self-correct path. With
    ``malformed_rate > 0`` some replies are broken on purpose; a broken
    reply is redrawn on each self-correction attempt.
    """

    is_simulated = True

    def __init__(self, graph, noise_model: OracleNoiseModel, cdensity_scores):
        if graph.gold_labels is None:
            raise ValueError("the simulated annotator needs gold labels")
        if noise_model.num_classes != graph.num_classes:
            raise ValueError("noise model class count does not match the graph")
        self.graph = graph
        self.noise = noise_model
        self.cdensity = np.asarray(cdensity_scores, dtype=float)
        self.calls = 0

    def complete(self, request) -> str:
        self.calls += 1
        g = self.graph
        node = request.node_id
        label, conf = draw_answer(self.noise, g.gold_labels[node], self.cdensity[node], node)
        if self.noise.malformed_rate > 0:
            rng = np.random.default_rng([self.noise.seed, int(node), 1, request.query, request.attempt])
            if rng.random() < self.noise.malformed_rate:
                if rng.random() < 0.5:
                    return "I think this belongs to " + g.class_names[label].lower() + "."
                return json.dumps([{"answer": "unrelated topic", "confidence": round(conf)}])
        k = request.top_k if request.top_k else 1
        conf_i = int(round(conf))
        answers = [{"answer": g.class_names[label], "confidence": conf_i}]
        if k > 1:
            rng = np.random.default_rng([self.noise.seed, int(node), 2])
            others = [c for c in rng.permutation(g.num_classes).tolist() if c != label][: k - 1]
            rest = 100 - conf_i
            shares = sorted(rng.dirichlet(np.ones(len(others))) * rest, reverse=True)
            ints = [int(s) for s in shares]
            ints[0] += rest - sum(ints)
            answers += [{"answer": g.class_names[c], "confidence": s} for c, s in zip(others, ints)]
        return json.dumps(answers)
