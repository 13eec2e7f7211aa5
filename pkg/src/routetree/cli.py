"""Command-line entry point: the full pipeline behind one executable.

Every command reads a declarative JSON config, resolves a run directory
`runs/<name>/` with the layout {config.json, checkpoints/, metrics.jsonl,
results.jsonl, reports/}, and exits 0 on success, 2 on configuration
errors, 3 on data errors, and 4 on numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import baselines, inspect_tree, kernels
from .config import (
    build_model_config,
    build_synth_spec,
    build_train_config,
    load_config,
)
from .errors import ConfigInvalid, NonFinite, RouteTreeError
from .index import (
    build_index,
    evaluate,
    load_index,
    save_index,
    search,
    write_results_jsonl,
)
from .io import read_manifest, read_pairs, read_store, write_store
from .model import TreeModel
from .synth import generate
from .trainer import check_gradients, load_checkpoint, train

log = logging.getLogger("routetree")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _setup_logging() -> None:
    level = os.environ.get("RTRV_LOG", "info").lower()
    if level not in ("error", "info", "debug"):
        raise ConfigInvalid(f"RTRV_LOG must be error|info|debug, got {level!r}")
    logging.basicConfig(
        level={"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}[level],
        format="%(levelname)s %(name)s: %(message)s")


def _set_threads(threads: int | None) -> None:
    if threads is None or kernels.BACKEND != "numba":
        return
    import numba

    numba.set_num_threads(max(1, threads))


def _run_dir(args) -> str:
    path = os.path.join(args.runs, args.name)
    for sub in ("checkpoints", "reports"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)
    return path


def _load_data(document: dict, need_manifest: bool = False):
    """Returns (context_store, query_store, pairs, manifest)."""
    spec = build_synth_spec(document)
    if spec is not None:
        ctx, qry, pairs, manifest = generate(spec)
        return ctx, qry, pairs, manifest
    io_cfg = document.get("io", {})
    for key in ("contexts", "queries", "pairs"):
        if key not in io_cfg:
            raise ConfigInvalid(f"$.io.{key}: required when io.synth absent")
    ctx = read_store(io_cfg["contexts"])
    qry = read_store(io_cfg["queries"])
    pairs = read_pairs(io_cfg["pairs"])
    manifest = None
    if "manifest" in io_cfg:
        manifest = read_manifest(io_cfg["manifest"])
    elif need_manifest:
        raise ConfigInvalid("$.io.manifest: required for this command")
    return ctx, qry, pairs, manifest


def _load_model(args) -> TreeModel:
    ckpt = args.checkpoint or os.path.join(
        _run_dir(args), "checkpoints", "final.rtck")
    model, _, _, _, _ = load_checkpoint(ckpt)
    return model


def _ground_truth(pairs, split="test"):
    subset = pairs.split_pairs(split)
    return ([p.query_id for p in subset],
            {p.query_id: p.context_id for p in subset})


# ---------------------------------------------------------------------------
# commands


def cmd_train(args, document) -> int:
    run = _run_dir(args)
    with open(os.path.join(run, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2)
    ctx, qry, pairs, _ = _load_data(document)
    train_cfg = build_train_config(document)
    if args.seed is not None:
        train_cfg.seed = args.seed
    model_cfg = build_model_config(document)
    model = TreeModel(model_cfg, np.random.default_rng(train_cfg.seed))
    log.info("training %s/%s depth=%d for %d steps",
             model_cfg.split.variant, model_cfg.propagation.variant,
             model_cfg.depth, train_cfg.total_steps)
    train(train_cfg, model, qry, ctx, pairs,
          metric_log=os.path.join(run, "metrics.jsonl"),
          checkpoint_dir=os.path.join(run, "checkpoints"))
    log.info("final checkpoint at %s",
             os.path.join(run, "checkpoints", "final.rtck"))
    return EXIT_OK


def cmd_index(args, document) -> int:
    run = _run_dir(args)
    ctx, _, _, _ = _load_data(document)
    model = _load_model(args)
    level = args.level if args.level is not None else model.topology.depth
    metric = document.get("eval", {}).get("metric", "ntvd")
    index = build_index(model, ctx, level, metric)
    out = os.path.join(run, "reports", f"index_L{level}.rtrv")
    save_index(index, out)
    log.info("wrote %s (%d rows, width %d)", out, index.count, index.width)
    return EXIT_OK


def cmd_search(args, document) -> int:
    run = _run_dir(args)
    ctx, qry, pairs, _ = _load_data(document)
    model = _load_model(args)
    level = args.level if args.level is not None else model.topology.depth
    metric = document.get("eval", {}).get("metric", "ntvd")
    index_path = os.path.join(run, "reports", f"index_L{level}.rtrv")
    if os.path.exists(index_path):
        index = load_index(index_path)
    else:
        index = build_index(model, ctx, level, metric)
    qids, _ = _ground_truth(pairs)
    rows = model.assignments(qry, qids, level)
    k = args.k if args.k is not None else 10
    results = {qid: search(index, row, k) for qid, row in zip(qids, rows)}
    out = os.path.join(run, "results.jsonl")
    write_results_jsonl(results, out)
    log.info("wrote %s (%d queries, k=%d)", out, len(results), k)
    return EXIT_OK


def cmd_eval(args, document) -> int:
    run = _run_dir(args)
    ctx, qry, pairs, _ = _load_data(document)
    model = _load_model(args)
    eval_cfg = document.get("eval", {})
    levels = ([args.level] if args.level is not None
              else eval_cfg.get("levels", [model.topology.depth]))
    ks = [args.k] if args.k is not None else eval_cfg.get("k", [1, 10, 100])
    metric = eval_cfg.get("metric", "ntvd")
    qids, gt = _ground_truth(pairs)
    report = {}
    for level in levels:
        index = build_index(model, ctx, level, metric)
        rows = model.assignments(qry, qids, level)
        level_report, _ = evaluate(index, rows, qids, gt, ks=tuple(ks))
        report[str(level)] = level_report
        log.info("level %d: %s", level, level_report)
    out = os.path.join(run, "reports", "eval.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(json.dumps(report))
    return EXIT_OK


def cmd_baseline(args, document) -> int:
    run = _run_dir(args)
    ctx, qry, pairs, _ = _load_data(document)
    b = document.get("baseline", {})
    kind = b.get("kind", "kmeans")
    depth = b.get("depth", 5)
    tree = baselines.fit_cluster_tree(
        ctx.sentence_vectors, depth, kind, b.get("seed", 0))
    qids, gt = _ground_truth(pairs)
    ks = [args.k] if args.k is not None else [1, 10]
    hits = {k: 0 for k in ks}
    for qid in qids:
        got = baselines.tree_search(tree, qry.sentence_vectors[qid],
                                    max(ks), ctx.sentence_vectors)
        for k in ks:
            if gt[qid] in got.ids[:k]:
                hits[k] += 1
    report = {"kind": kind, "depth": depth,
              "recall": {str(k): hits[k] / len(qids) for k in ks}}
    out = os.path.join(run, "reports", f"baseline_{kind}.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump({**report,
                   "tree": baselines.cluster_tree_to_json(tree)}, fh)
    print(json.dumps(report))
    return EXIT_OK


def cmd_inspect(args, document) -> int:
    run = _run_dir(args)
    ctx, _, _, manifest = _load_data(document, need_manifest=True)
    model = _load_model(args)
    cfg = document.get("inspect", {})
    modes = cfg.get("modes", ["all_pairs", "lca", "keywords"])
    report = {}
    for mode in modes:
        if mode in ("all_pairs", "ancestor_descendant"):
            report[mode] = inspect_tree.node_embedding_similarity(model, mode)
        elif mode == "lca":
            report[mode] = inspect_tree.lca_context_similarity(
                model, ctx, cfg.get("sample_size", 100_000),
                args.seed if args.seed is not None else 0)
        elif mode == "keywords":
            report[mode] = inspect_tree.node_keywords(
                model, ctx, manifest, cfg.get("k", 5))
            report[mode]["nodes"] = {
                str(k): v for k, v in report[mode]["nodes"].items()}
    out = os.path.join(run, "reports", "inspect.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_check_grad(args, document) -> int:
    reports = check_gradients(seed=args.seed if args.seed is not None else 0)
    worst = 0.0
    for r in reports:
        agg = r["aggregator"] or "-"
        print(f'{r["split"]:<16} {agg:<16} {r["propagation"]:<8} '
              f'max_rel_err={r["max_rel_err"]:.3e} '
              f'{"PASS" if r["pass"] else "FAIL"}')
        worst = max(worst, r["max_rel_err"])
    run = _run_dir(args)
    with open(os.path.join(run, "reports", "check_grad.json"), "w",
              encoding="utf-8") as fh:
        json.dump(reports, fh, indent=2)
    return EXIT_OK if all(r["pass"] for r in reports) else EXIT_NUMERIC


def cmd_export_tree(args, document) -> int:
    run = _run_dir(args)
    ctx, _, _, manifest = _load_data(document, need_manifest=True)
    model = _load_model(args)
    keywords = inspect_tree.node_keywords(
        model, ctx, manifest, document.get("inspect", {}).get("k", 5))
    doc = inspect_tree.export_tree(model, keywords, args.format)
    out = os.path.join(run, "reports", f"tree.{args.format}")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(doc)
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_synth(args, document) -> int:
    """Materialize the configured synthetic corpus as embedding-io files."""
    spec = build_synth_spec(document)
    if spec is None:
        raise ConfigInvalid("$.io.synth: required for the synth command")
    run = _run_dir(args)
    ctx, qry, pairs, manifest = generate(spec)
    from .io import write_manifest, write_pairs

    write_store(ctx, os.path.join(run, "contexts.rtrv"))
    write_store(qry, os.path.join(run, "queries.rtrv"))
    write_pairs(pairs, os.path.join(run, "pairs.jsonl"))
    write_manifest(manifest, os.path.join(run, "manifest.jsonl"))
    log.info("wrote synthetic corpus to %s", run)
    return EXIT_OK


# ---------------------------------------------------------------------------


_COMMANDS = {
    "train": cmd_train,
    "index": cmd_index,
    "search": cmd_search,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "inspect": cmd_inspect,
    "check-grad": cmd_check_grad,
    "export-tree": cmd_export_tree,
    "synth": cmd_synth,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routetree",
        description="Trainable binary routing trees for embedding retrieval")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?" if name == "check-grad" else None,
                       help="path to the JSON run config")
        p.add_argument("--runs", default="runs",
                       help="root directory for run artifacts")
        p.add_argument("--name", default="default", help="run name")
        p.add_argument("--checkpoint", default=None,
                       help="explicit checkpoint path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--level", type=int, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        if name == "export-tree":
            p.add_argument("--format", choices=("json", "dot"),
                           default="json")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _setup_logging()
        _set_threads(args.threads)
        document = load_config(args.config) if args.config else {}
        return _COMMANDS[args.command](args, document)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFinite as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RouteTreeError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
