"""Metrics, annotation-noise analysis and report files."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .annotator import ABSTAIN


def accuracy(predictions, gold, mask=None) -> float:
    """Exact-match fraction over ``mask`` (all nodes when omitted).

    ``mask`` may be a boolean vector or an index array.
    """
    p = np.asarray(predictions)
    g = np.asarray(gold)
    if p.shape != g.shape:
        raise ValueError("predictions and gold must have the same shape")
    if mask is not None:
        mask = np.asarray(mask)
        p, g = p[mask], g[mask]
    if len(p) == 0:
        raise ValueError("accuracy over an empty set")
    return float((p == g).mean())


def holdout_mask(node_count: int, selected) -> np.ndarray:
    """Boolean mask of nodes never sent for annotation."""
    m = np.ones(node_count, dtype=bool)
    m[np.asarray(selected, dtype=np.int64)] = False
    return m


def annotation_quality(annotations, gold) -> tuple:
    """``(quality, abstained)``: match fraction over non-abstained
    annotations, and how many abstained."""
    g = np.asarray(gold)
    kept = [a for a in annotations if a.label_index != ABSTAIN]
    abstained = len(annotations) - len(kept)
    if not kept:
        return float("nan"), abstained
    hits = sum(int(a.label_index == g[a.node_id]) for a in kept)
    return hits / len(kept), abstained


@dataclass(frozen=True, eq=False)
class NoiseTransitionMatrix:
    matrix: np.ndarray
    support: np.ndarray

    def diagonal_average(self) -> float:
        """Support-weighted mean of the diagonal (equals annotation quality)."""
        return float((np.diag(self.matrix) * self.support).sum() / self.support.sum())


def noise_transition(true_labels, noisy_labels, n_classes: int) -> NoiseTransitionMatrix:
    """Row-normalised confusion: entry ``(i, j)`` estimates P(label j | true i).

    Pairs whose noisy label is ABSTAIN are ignored; rows without support stay 0.
    """
    t = np.asarray(true_labels, dtype=np.int64)
    y = np.asarray(noisy_labels, dtype=np.int64)
    keep = y != ABSTAIN
    counts = np.zeros((n_classes, n_classes))
    np.add.at(counts, (t[keep], y[keep]), 1.0)
    support = counts.sum(axis=1)
    mat = np.divide(counts, support[:, None], out=np.zeros_like(counts), where=support[:, None] > 0)
    return NoiseTransitionMatrix(mat, support.astype(np.int64))


def annotation_transition(annotations, gold, n_classes: int) -> NoiseTransitionMatrix:
    g = np.asarray(gold)
    return noise_transition([g[a.node_id] for a in annotations], [a.label_index for a in annotations],
                            n_classes)


def inject_synthetic_noise(gold, quality: float, n_classes: int | None = None, seed: int = 0) -> np.ndarray:
    """Flip exactly ``round((1 - quality) * N)`` labels, each to a uniformly
    chosen different class."""
    g = np.asarray(gold, dtype=np.int64)
    if not 0.0 <= quality <= 1.0:
        raise ValueError("quality must lie in [0, 1]")
    c = n_classes if n_classes is not None else int(g.max()) + 1
    if c < 2:
        raise ValueError("need at least two classes to flip labels")
    rng = np.random.default_rng(seed)
    n_flip = int(round((1.0 - quality) * len(g)))
    idx = rng.choice(len(g), size=n_flip, replace=False)
    out = g.copy()
    shift = rng.integers(1, c, size=n_flip)
    out[idx] = (g[idx] + shift) % c
    return out


def spearman(x, y) -> float:
    from scipy.stats import spearmanr
    return float(spearmanr(x, y).statistic)


def decile_accuracy(distances, correct, groups: int = 10):
    """Mean correctness per equal-size group of nodes ordered by distance
    (closest first), plus the running cumulative mean."""
    d = np.asarray(distances, dtype=float)
    ok = np.asarray(correct, dtype=float)
    order = np.argsort(d, kind="stable")
    parts = np.array_split(order, groups)
    bars = [float(ok[p].mean()) for p in parts]
    cum = [float(ok[np.concatenate(parts[:i + 1])].mean()) for i in range(groups)]
    return bars, cum


def confidence_curve(confidences, correct, ks=None):
    """Accuracy of the top-``k`` most confident annotations for each ``k``."""
    conf = np.asarray(confidences, dtype=float)
    ok = np.asarray(correct, dtype=float)
    order = np.argsort(-conf, kind="stable")
    if ks is None:
        ks = [k for k in range(50, len(conf) + 1, 50)] or [len(conf)]
    return [(int(k), float(ok[order[:k]].mean())) for k in ks if 0 < k <= len(conf)]


# ---------------------------------------------------------------- reports

@dataclass
class ExperimentReport:
    strategy: str
    budget: int
    annotation_quality: float
    test_accuracy_mean: float
    test_accuracy_std: float
    cost: dict = field(default_factory=dict)
    per_seed: list = field(default_factory=list)

    def formatted_accuracy(self) -> str:
        return f"{100 * self.test_accuracy_mean:.2f} ± {100 * self.test_accuracy_std:.2f}"

    @classmethod
    def from_runs(cls, strategy, budget, runs) -> "ExperimentReport":
        """Aggregate per-seed run dicts (``test_accuracy``, ``annotation_quality``,
        ``cost``) into mean ± population std."""
        acc = np.array([r["test_accuracy"] for r in runs], dtype=float)
        qual = np.array([r["annotation_quality"] for r in runs], dtype=float)
        cost = {}
        for r in runs:
            for k, v in r.get("cost", {}).items():
                cost[k] = cost.get(k, 0) + v
        return cls(strategy, int(budget), float(qual.mean()), float(acc.mean()), float(acc.std()), cost,
                   list(runs))


REPORT_COLUMNS = ("strategy", "budget", "annotation_quality", "test_accuracy", "test_accuracy_mean",
                  "test_accuracy_std", "dollars_estimate", "seeds")


def report_rows(reports):
    for r in reports:
        yield [r.strategy, r.budget, f"{100 * r.annotation_quality:.2f}", r.formatted_accuracy(),
               repr(r.test_accuracy_mean), repr(r.test_accuracy_std),
               repr(float(r.cost.get("dollars_estimate", 0.0))), len(r.per_seed)]


def _write_csv(path, header_line, columns, rows):
    buf = io.StringIO()
    buf.write(header_line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps_report(reports, config_hash: str) -> str:
    return json.dumps({"config_hash": config_hash, "reports": [asdict(r) for r in reports]},
                      sort_keys=True, indent=2, default=_json_default) + "\n"


def emit_report(reports, out_dir, config_hash: str, plot_data: dict | None = None, formats=("csv", "json")):
    """Write ``report.csv`` / ``report.json`` and ``plotdata/<name>.csv``.

    ``plot_data`` maps a series name to ``(columns, rows)``. Every file
    starts with (or, for JSON, contains) the config hash.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = f"# config_hash={config_hash}"
    written = []
    if "csv" in formats:
        _write_csv(out / "report.csv", header, REPORT_COLUMNS, list(report_rows(reports)))
        written.append(out / "report.csv")
    if "json" in formats:
        (out / "report.json").write_text(dumps_report(reports, config_hash), encoding="utf-8")
        written.append(out / "report.json")
    if plot_data:
        pd = out / "plotdata"
        pd.mkdir(exist_ok=True)
        for name, (columns, rows) in sorted(plot_data.items()):
            _write_csv(pd / f"{name}.csv", header, columns, rows)
            written.append(pd / f"{name}.csv")
    return written


def load_report(path) -> tuple:
    """Inverse of the JSON half of :func:`emit_report`: ``(reports, config_hash)``."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ExperimentReport(**r) for r in obj["reports"]], obj["config_hash"]
