"""Staged pipeline: select, annotate, filter, train, evaluate.

Every stage reads its inputs from and writes its outputs to one run
directory, so running the stages one by one and running
:func:`run_single` produce the same files.
"""
from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import clustering, evaluation
from .annotator import (ABSTAIN, AnnotationCache, LiveBackend, OracleNoiseModel, SimulatedBackend,
                        Transcript, annotate_batch, calibrate_base_accuracy, confusable_transition,
                        uniform_transition)
from .config import ConfigError, PipelineConfig, derive_seed
from .filtering import post_filter
from .gcn import load_checkpoint, predict, save_checkpoint, train
from .graph import load_graph_bundle, normalized_adjacency
from .selection import select_nodes, write_selection
from .synthetic import make_synthetic_tag

log = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
SELECTION_FILE = "selection.json"
ANNOTATIONS_FILE = "annotations.jsonl"
COST_FILE = "cost.json"
TRANSCRIPT_FILE = "transcript.jsonl"
SURVIVORS_FILE = "survivors.json"
CHECKPOINT_FILE = "model.gcn"
HISTORY_FILE = "history.csv"
METRICS_FILE = "metrics.json"
RUN_ARTIFACTS = (SELECTION_FILE, ANNOTATIONS_FILE, COST_FILE, TRANSCRIPT_FILE, SURVIVORS_FILE,
                 CHECKPOINT_FILE, HISTORY_FILE, METRICS_FILE, "report.csv", "report.json")


class OutputConflict(ConfigError):
    """The output directory was produced by a different configuration."""


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=evaluation._json_default) + "\n"


def write_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------ run directory

def prepare_output(cfg: PipelineConfig, out, force: bool = False) -> Path:
    """Claim ``out`` for ``cfg``. An existing directory written under a
    different config hash is refused unless ``force`` is set, in which case
    its artifacts are removed first."""
    out = Path(out)
    stamp = out / CONFIG_FILE
    h = cfg.config_hash()
    if stamp.is_file():
        old = load_json(stamp).get("config_hash")
        if old != h:
            if not force:
                raise OutputConflict(f"{out} holds results for config {old}, not {h}; "
                                     "use a new --out or pass --force")
            clear_output(out)
    write_atomic(stamp, _dumps({"config_hash": h, "config": cfg.to_dict()}))
    return out


def clear_output(out):
    out = Path(out)
    for name in RUN_ARTIFACTS + (CONFIG_FILE,):
        (out / name).unlink(missing_ok=True)
    for sub in ("plotdata",):
        shutil.rmtree(out / sub, ignore_errors=True)
    for pattern in ("seed-*", "budget-*"):
        for run_dir in out.glob(pattern):
            shutil.rmtree(run_dir, ignore_errors=True)


def check_output(cfg: PipelineConfig, out) -> Path:
    """For stages after the first: the directory must already belong to ``cfg``."""
    out = Path(out)
    stamp = out / CONFIG_FILE
    if not stamp.is_file():
        raise ConfigError(f"{out} has no {CONFIG_FILE}; run the earlier stages first")
    old = load_json(stamp).get("config_hash")
    if old != cfg.config_hash():
        raise OutputConflict(f"{out} was produced by config {old}, current config is {cfg.config_hash()}")
    return out


def _require(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"missing {path.name}; run '{stage}' first")
    return path


# ------------------------------------------------------------------ inputs

def load_graph(cfg: PipelineConfig):
    if cfg.bundle is not None:
        return load_graph_bundle(cfg.bundle)
    return make_synthetic_tag(**cfg.synthetic)


def resolve_budget(cfg: PipelineConfig, graph) -> int:
    return cfg.selection.budget or 20 * graph.num_classes


def strategy_name(cfg: PipelineConfig) -> str:
    """Short label such as ``PS-DA-featprop-W``."""
    name = cfg.selection.method
    if cfg.selection.difficulty_aware:
        name = "DA-" + name
    if cfg.filter_enabled:
        name = "PS-" + name
    if cfg.train.loss_kind == "weighted_ce":
        name += "-W"
    return name


def cdensity_for(graph, n_clusters, seed):
    """``(scores, distances)`` to the nearest of ``n_clusters`` k-means centers."""
    model = clustering.kmeans(graph.features, n_clusters or graph.num_classes, seed=seed)
    dist = clustering.nearest_center_distance(graph.features, model.centers)
    return 1.0 / (1.0 + dist), dist


def selection_cdensity(cfg, graph):
    return cdensity_for(graph, cfg.selection.cdensity_clusters, derive_seed(cfg.seed, "selection"))


def build_noise_model(cfg: PipelineConfig, graph):
    """Simulated annotator for ``cfg``; returns ``(noise_model, cdensity)``.

    The oracle measures difficulty with its own k-means fit so that it
    does not share randomness with the selection stage.
    """
    s = cfg.simulator
    seed = derive_seed(cfg.seed, "oracle")
    cd, _ = cdensity_for(graph, s.clusters, seed)
    c = graph.num_classes
    if s.transition == "uniform":
        t = uniform_transition(c)
    else:
        t = confusable_transition(c, focus=s.transition_focus, seed=seed)
    noise = OracleNoiseModel(s.base_accuracy, s.density_slope, t, s.confidence_calibration, seed,
                             s.malformed_rate, s.difficulty_noise)
    if s.target_quality is not None:
        offsets = noise.difficulty_offset(np.arange(graph.node_count))
        base = calibrate_base_accuracy(cd, s.density_slope, s.target_quality, offsets=offsets)
        noise = replace(noise, base_accuracy=base)
    return noise, cd


def make_backend(cfg: PipelineConfig, graph):
    if cfg.backend == "sim":
        noise, cd = build_noise_model(cfg, graph)
        return SimulatedBackend(graph, noise, cd)
    return LiveBackend(cfg.live)


# ------------------------------------------------------------------ stages

def stage_select(cfg: PipelineConfig, graph, out) -> np.ndarray:
    sel = replace(cfg.selection, seed=derive_seed(cfg.seed, "selection"))
    budget = resolve_budget(cfg, graph)
    try:
        sel.budget = budget
        sel.validate(graph.node_count)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    nodes = select_nodes(graph, sel)
    obj = write_selection(Path(out) / SELECTION_FILE, sel, nodes, budget)
    obj["config_hash"] = cfg.config_hash()
    write_atomic(Path(out) / SELECTION_FILE, _dumps(obj))
    return nodes


def read_nodes(out) -> np.ndarray:
    obj = load_json(_require(Path(out) / SELECTION_FILE, "select"))
    return np.asarray(obj["node_ids"], dtype=np.int64)


def open_cache(cfg, graph, out) -> AnnotationCache:
    return AnnotationCache(Path(out) / ANNOTATIONS_FILE, graph.class_names,
                           header={"config_hash": cfg.config_hash()})


def _accumulate_cost(out, cfg, cost, aborted):
    """Add this call's spend to what earlier (possibly aborted) calls recorded."""
    path = Path(out) / COST_FILE
    total = cost.as_dict()
    if path.is_file():
        prev = load_json(path)
        for k, v in total.items():
            total[k] = prev.get(k, 0) + v
    write_atomic(path, _dumps({"config_hash": cfg.config_hash(), "aborted": aborted, **total}))


def stage_annotate(cfg: PipelineConfig, graph, out, backend=None):
    """Annotate the stored selection; returns ``(annotations, cost)`` where
    ``cost`` covers only requests issued by this call.

    Cached nodes cost nothing, so a rerun leaves ``cost.json`` unchanged. A
    :class:`~labelfree.annotator.BudgetExceeded` propagates after partial
    results are cached and the partial spend is recorded.
    """
    from .annotator import BudgetExceeded
    out = Path(out)
    nodes = read_nodes(out)
    backend = backend or make_backend(cfg, graph)
    transcript = Transcript(out / TRANSCRIPT_FILE) if cfg.backend == "live" else None
    a = cfg.annotation
    prices = (cfg.live.prompt_price, cfg.live.completion_price)
    try:
        anns, cost = annotate_batch(backend, graph, nodes, cfg.strategy, max_retries=a.max_retries,
                                    concurrency_limit=a.concurrency_limit, cache=open_cache(cfg, graph, out),
                                    prices=prices, max_dollars=a.max_dollars, transcript=transcript)
    except BudgetExceeded as exc:
        _accumulate_cost(out, cfg, exc.cost, True)
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _accumulate_cost(out, cfg, cost, False)
    return anns, cost


def read_annotations(cfg, graph, out, nodes) -> list:
    _require(Path(out) / ANNOTATIONS_FILE, "annotate") if len(nodes) else None
    cache = open_cache(cfg, graph, out)
    anns = []
    for n in nodes:
        a = cache.get(int(n), cfg.strategy.tag)
        if a is None:
            raise ConfigError(f"node {int(n)} has no annotation; rerun 'annotate'")
        anns.append(a)
    return anns


def stage_filter(cfg: PipelineConfig, graph, out):
    """Drop ABSTAIN results, then post-filter if enabled. Returns
    ``(survivors, removal_log)``."""
    out = Path(out)
    nodes = read_nodes(out)
    anns = read_annotations(cfg, graph, out, nodes)
    kept = [a for a in anns if a.label_index != ABSTAIN]
    ids = np.array([a.node_id for a in kept], dtype=np.int64)
    removal_log = []
    if cfg.filter_enabled and len(kept):
        cd, _ = selection_cdensity(cfg, graph)
        labels = np.array([a.label_index for a in kept], dtype=np.int64)
        conf = np.array([a.confidence for a in kept])
        try:
            survivors, removal_log = post_filter(ids, labels, conf, cd[ids], cfg.filter, graph.num_classes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        survivors = ids
    write_atomic(out / SURVIVORS_FILE, _dumps({
        "config_hash": cfg.config_hash(), "filter_enabled": cfg.filter_enabled,
        "selected": [int(i) for i in nodes], "abstained": [a.node_id for a in anns if a.abstained],
        "survivors": [int(i) for i in survivors], "removal_log": removal_log}))
    return survivors, removal_log


def read_survivors(out) -> np.ndarray:
    obj = load_json(_require(Path(out) / SURVIVORS_FILE, "filter"))
    return np.asarray(obj["survivors"], dtype=np.int64)


def stage_train(cfg: PipelineConfig, graph, out):
    out = Path(out)
    survivors = read_survivors(out)
    if len(survivors) == 0:
        raise ConfigError("no annotated nodes survived; nothing to train on")
    by_id = {a.node_id: a for a in read_annotations(cfg, graph, out, survivors)}
    labels = np.array([by_id[int(n)].label_index for n in survivors], dtype=np.int64)
    weights = np.array([by_id[int(n)].confidence / 100.0 for n in survivors])
    tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, "train"))
    adj = normalized_adjacency(graph)
    test = np.flatnonzero(evaluation.holdout_mask(graph.node_count, read_nodes(out)))
    params, history = train(graph, adj, survivors, labels, weights, tcfg,
                            test_indices=test if graph.gold_labels is not None else None)
    save_checkpoint(out / CHECKPOINT_FILE, params, tcfg.seed, cfg.config_hash())
    history.to_csv(out / HISTORY_FILE, f"# config_hash={cfg.config_hash()}")
    return params, history


def _read_history(path):
    rows = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    return [r.split(",") for r in rows[1:]]


def stage_evaluate(cfg: PipelineConfig, graph, out) -> dict:
    """Score the trained model on every node outside the selection and write
    ``metrics.json`` plus a one-row report."""
    if graph.gold_labels is None:
        raise ConfigError("evaluation needs gold labels")
    out = Path(out)
    nodes = read_nodes(out)
    anns = read_annotations(cfg, graph, out, nodes)
    survivors = read_survivors(out)
    params, header = load_checkpoint(_require(out / CHECKPOINT_FILE, "train"))
    if header.get("config_hash") != cfg.config_hash():
        raise OutputConflict("checkpoint was trained under a different config")
    gold = graph.gold_labels
    pred = predict(params, normalized_adjacency(graph), graph.features)
    mask = evaluation.holdout_mask(graph.node_count, nodes)
    quality, abstained = evaluation.annotation_quality(anns, gold)
    surv_set = set(int(i) for i in survivors)
    surv_quality, _ = evaluation.annotation_quality([a for a in anns if a.node_id in surv_set], gold)
    cost = load_json(out / COST_FILE) if (out / COST_FILE).is_file() else {}
    cost = {k: v for k, v in cost.items() if k not in ("config_hash", "aborted")}
    metrics = {
        "config_hash": cfg.config_hash(), "seed": cfg.seed, "strategy": strategy_name(cfg),
        "budget": int(len(nodes)), "abstained": int(abstained), "survivors": int(len(survivors)),
        "annotation_quality": quality, "survivor_quality": surv_quality,
        "test_accuracy": evaluation.accuracy(pred, gold, mask), "test_nodes": int(mask.sum()),
        "cost": cost,
    }
    write_atomic(out / METRICS_FILE, _dumps(metrics))
    report = evaluation.ExperimentReport.from_runs(metrics["strategy"], metrics["budget"], [metrics])
    evaluation.emit_report([report], out, cfg.config_hash(), plot_data=run_plot_data(cfg, graph, out, anns))
    return metrics


def run_plot_data(cfg, graph, out, anns) -> dict:
    """Per-run plot series: accuracy by C-Density distance decile, accuracy
    of the most confident annotations, training dynamics, the noise
    transition matrix and annotated vs gold label counts."""
    gold = graph.gold_labels
    kept = [a for a in anns if a.label_index != ABSTAIN]
    data = {}
    if kept:
        _, dist = selection_cdensity(cfg, graph)
        ids = np.array([a.node_id for a in kept])
        ok = np.array([a.label_index == gold[a.node_id] for a in kept], dtype=float)
        groups = min(10, len(kept))
        bars, cum = evaluation.decile_accuracy(dist[ids], ok, groups)
        data["density_deciles"] = (("decile", "accuracy", "cumulative_accuracy"),
                                   [(i + 1, repr(b), repr(c)) for i, (b, c) in enumerate(zip(bars, cum))])
        conf = [a.confidence for a in kept]
        data["confidence_curve"] = (("top_k", "accuracy"),
                                    [(k, repr(v)) for k, v in evaluation.confidence_curve(conf, ok)])
        t = evaluation.annotation_transition(kept, gold, graph.num_classes)
        rows = [(graph.class_names[i], int(t.support[i]), *(repr(float(x)) for x in t.matrix[i]))
                for i in range(graph.num_classes)]
        data["noise_transition"] = (("true_class", "support", *graph.class_names), rows)
        annotated = np.bincount([a.label_index for a in kept], minlength=graph.num_classes)
        truth = np.bincount(gold[ids], minlength=graph.num_classes)
        data["label_distribution"] = (("class", "annotated", "gold"),
                                      [(graph.class_names[i], int(annotated[i]), int(truth[i]))
                                       for i in range(graph.num_classes)])
    hist = Path(out) / HISTORY_FILE
    if hist.is_file():
        data["training_dynamics"] = (("epoch", "loss", "train_accuracy", "test_accuracy"), _read_history(hist))
    return data


# ---------------------------------------------------------------- drivers

def run_single(cfg: PipelineConfig, out, graph=None, backend=None, force: bool = False) -> dict:
    """All five stages for ``cfg.seed`` in ``out``; returns the metrics dict."""
    cfg.validate()
    graph = graph if graph is not None else load_graph(cfg)
    prepare_output(cfg, out, force=force)
    stage_select(cfg, graph, out)
    stage_annotate(cfg, graph, out, backend=backend)
    stage_filter(cfg, graph, out)
    stage_train(cfg, graph, out)
    return stage_evaluate(cfg, graph, out)


def seed_config(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    return replace(cfg, seed=int(seed), repeats=1)


def _pooled_plot_data(run_dirs):
    """Concatenate per-run plot rows, with a leading ``run`` column."""
    pooled = {}
    for i, d in enumerate(run_dirs):
        for f in sorted((Path(d) / "plotdata").glob("*.csv")):
            lines = f.read_text(encoding="utf-8").splitlines()
            header, body = lines[1].split(","), [ln.split(",") for ln in lines[2:]]
            cols, rows = pooled.setdefault(f.stem, (("run", *header), []))
            rows.extend([(i, *r) for r in body])
    return pooled


def run_pipeline(cfg: PipelineConfig, out=None, force: bool = False, graph=None):
    """Run ``cfg.repeats`` seeds (``seed``, ``seed+1``, ...) each in
    ``<out>/seed-<s>`` and write the aggregate report to ``out``."""
    cfg.validate()
    out = Path(out or cfg.out)
    graph = graph if graph is not None else load_graph(cfg)
    prepare_output(cfg, out, force=force)
    runs, dirs = [], []
    for r in range(cfg.repeats):
        scfg = seed_config(cfg, cfg.seed + r)
        d = out / f"seed-{scfg.seed}"
        runs.append(run_single(scfg, d, graph=graph, force=force))
        dirs.append(d)
    report = evaluation.ExperimentReport.from_runs(strategy_name(cfg), runs[0]["budget"], runs)
    evaluation.emit_report([report], out, cfg.config_hash(), plot_data=_pooled_plot_data(dirs))
    return report


def budget_sweep(cfg: PipelineConfig, budgets, seeds=None, out=None, force: bool = False, graph=None):
    """One report per entry of ``budgets``, each averaged over ``seeds``.

    Repeated budgets are run again rather than deduplicated; every repeat
    after the first shifts its seeds by a derived offset so the runs are
    independent.
    """
    cfg.validate()
    out = Path(out or cfg.out)
    graph = graph if graph is not None else load_graph(cfg)
    seeds = list(seeds) if seeds is not None else [cfg.seed + r for r in range(cfg.repeats)]
    if not budgets or not seeds:
        raise ConfigError("budget_sweep needs at least one budget and one seed")
    prepare_output(cfg, out, force=force)
    seen: dict = {}
    reports, curve = [], []
    for b in budgets:
        b = int(b)
        dup = seen.get(b, 0)
        seen[b] = dup + 1
        offset = 0 if dup == 0 else derive_seed(cfg.seed, f"sweep-dup-{b}-{dup}")
        runs = []
        for s in seeds:
            scfg = seed_config(cfg, s + offset)
            scfg = replace(scfg, selection=replace(scfg.selection, budget=b))
            d = out / (f"budget-{b}" if dup == 0 else f"budget-{b}-rep{dup}") / f"seed-{scfg.seed}"
            runs.append(run_single(scfg, d, graph=graph, force=force))
        rep = evaluation.ExperimentReport.from_runs(strategy_name(cfg), b, runs)
        reports.append(rep)
        curve.append((b, repr(rep.test_accuracy_mean), repr(rep.test_accuracy_std), repr(rep.annotation_quality)))
    evaluation.emit_report(reports, out, cfg.config_hash(), plot_data={
        "budget_curve": (("budget", "test_accuracy_mean", "test_accuracy_std", "annotation_quality"), curve)})
    return reports
