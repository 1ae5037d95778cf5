"""``labelfree`` command line.

Exit codes: 0 success, 2 configuration error, 3 backend failure,
4 spend cap reached.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .annotator import BackendError, BudgetExceeded, TransportError
from .config import ConfigError, load_config, parse_value
from .graph import BundleError, convert_linqs, load_graph_bundle, save_graph_bundle

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_BUDGET = 0, 2, 3, 4

COMMANDS = ("ingest", "select", "annotate", "filter", "train", "evaluate", "pipeline", "sweep")


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--backend", choices=("live", "sim"))
    p.add_argument("--allow-spend", action="store_true", help="permit paid requests to the live backend")
    p.add_argument("--max-dollars", type=float, help="abort annotation once estimated spend reaches this")
    p.add_argument("--force", action="store_true", help="replace results left by a different config")


def build_parser():
    ap = argparse.ArgumentParser(prog="labelfree", description="Node classification from LLM annotations, without human labels.",
                                 epilog="Any config field can be set with its dotted name, "
                                        "e.g. --selection.budget 100 or --train.loss_kind weighted_ce.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="validate a graph bundle or convert a LINQS dataset into one")
    src = ing.add_mutually_exclusive_group(required=True)
    src.add_argument("--bundle", help="existing bundle directory to validate")
    src.add_argument("--linqs", nargs=2, metavar=("CONTENT", "CITES"), help="LINQS .content and .cites files")
    src.add_argument("--synthetic", action="store_true", help="write a synthetic blob graph")
    ing.add_argument("--nodes", type=int, default=2000)
    ing.add_argument("--classes", type=int, default=8)
    ing.add_argument("--seed", type=int, default=0)
    ing.add_argument("--out", help="bundle directory to write")

    for name, text in (("select", "choose nodes to annotate"),
                       ("annotate", "annotate the selected nodes"),
                       ("filter", "post-filter the annotations"),
                       ("train", "train the GCN on surviving annotations"),
                       ("evaluate", "score the trained model and write a report"),
                       ("pipeline", "run every stage for each repeat seed"),
                       ("sweep", "run the pipeline across budgets")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "sweep":
            p.add_argument("--budgets", required=True,
                           help="comma-separated budgets; '20C' means 20 times the class count")
            p.add_argument("--seeds", help="comma-separated seeds (default: seed .. seed+repeats-1)")
    return ap


def split_overrides(extra):
    """``['--a.b', '3', '--c.d=x']`` -> ``{'a.b': 3, 'c.d': 'x'}``."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise ConfigError(f"unrecognised argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"{tok} needs a value")
            i += 1
            val = extra[i]
        out[key] = parse_value(val)
        i += 1
    return out


def resolve_config(args, extra):
    overrides = split_overrides(extra)
    for flag, key in (("seed", "seed"), ("out", "out"), ("backend", "backend"),
                      ("max_dollars", "annotation.max_dollars")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "allow_spend", False):
        overrides["annotation.allow_spend"] = True
    return load_config(args.config, overrides).validate()


def _budgets(text, n_classes):
    out = []
    for part in text.split(","):
        part = part.strip()
        if part.upper().endswith("C"):
            out.append(int(float(part[:-1]) * n_classes))
        else:
            out.append(int(part))
    return out


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_ingest(args):
    if args.bundle:
        g = load_graph_bundle(args.bundle)
        if args.out:
            save_graph_bundle(g, args.out)
    else:
        if not args.out:
            raise ConfigError("--out is required")
        if args.linqs:
            g = convert_linqs(args.linqs[0], args.linqs[1], args.out)
        else:
            from .synthetic import make_synthetic_tag
            g = make_synthetic_tag(n_nodes=args.nodes, n_classes=args.classes, seed=args.seed)
            save_graph_bundle(g, args.out)
    _print({"nodes": g.node_count, "edges": g.edge_count, "feature_dim": g.feature_dim,
            "classes": g.num_classes, "has_gold": g.gold_labels is not None})


def run_command(args, extra) -> int:
    if args.command == "ingest":
        if extra:
            raise ConfigError(f"unrecognised arguments {extra}")
        cmd_ingest(args)
        return EXIT_OK
    cfg = resolve_config(args, extra)
    out = Path(cfg.out)
    if args.command == "pipeline":
        rep = pipeline.run_pipeline(cfg, out, force=args.force)
        print(f"{rep.strategy} budget={rep.budget} accuracy {rep.formatted_accuracy()} "
              f"annotation quality {100 * rep.annotation_quality:.2f}")
        return EXIT_OK
    graph = pipeline.load_graph(cfg)
    if args.command == "sweep":
        budgets = _budgets(args.budgets, graph.num_classes)
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
        for rep in pipeline.budget_sweep(cfg, budgets, seeds, out, force=args.force, graph=graph):
            print(f"budget={rep.budget} accuracy {rep.formatted_accuracy()}")
        return EXIT_OK
    if args.command == "select":
        pipeline.prepare_output(cfg, out, force=args.force)
        nodes = pipeline.stage_select(cfg, graph, out)
        print(f"selected {len(nodes)} nodes -> {out / pipeline.SELECTION_FILE}")
        return EXIT_OK
    pipeline.check_output(cfg, out)
    if args.command == "annotate":
        try:
            _, cost = pipeline.stage_annotate(cfg, graph, out)
        except BudgetExceeded as exc:
            print(f"spend cap hit: {exc}; {len(exc.annotations)} annotations cached", file=sys.stderr)
            return EXIT_BUDGET
        _print(cost.as_dict())
    elif args.command == "filter":
        survivors, removed = pipeline.stage_filter(cfg, graph, out)
        print(f"{len(survivors)} survivors, {len(removed)} removed")
    elif args.command == "train":
        _, history = pipeline.stage_train(cfg, graph, out)
        print(f"trained {len(history)} epochs, final loss {history.loss[-1]:.4f}")
    elif args.command == "evaluate":
        m = pipeline.stage_evaluate(cfg, graph, out)
        print(f"test accuracy {100 * m['test_accuracy']:.2f}, annotation quality "
              f"{100 * m['annotation_quality']:.2f}")
    return EXIT_OK


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args, extra)
    except BudgetExceeded as exc:
        print(f"spend cap hit: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (BackendError, TransportError) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, BundleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
