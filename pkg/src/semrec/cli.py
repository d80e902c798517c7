"""Command-line entry point: per-stage subcommands plus the cached `run` driver."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import gatrec, pipeline
from .embed import EmbedderConfig
from .gateway import ProviderConfig
from .ingest import load_dataset, load_item_metadata, parse_movielens, save_dataset


def _add_fold_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fold", type=int, default=0, help="fold index (default 0)")
    p.add_argument("--folds", type=int, default=5, help="number of folds (default 5)")
    p.add_argument("--cold-fraction", type=float, default=0.1,
                   help="fraction of users cold-start-truncated (0 disables)")


def _base_config(args, **overrides) -> pipeline.RunConfig:
    cfg = pipeline.RunConfig(
        provider=ProviderConfig(kind=getattr(args, "provider", "mock")),
        seed=getattr(args, "seed", 0),
        n_folds=getattr(args, "folds", 5),
        fold=str(getattr(args, "fold", 0)),
        cold_start_fraction=getattr(args, "cold_fraction", 0.1),
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def _fold_of(cfg: pipeline.RunConfig, dataset, index: int):
    return pipeline.dataset_folds(cfg, dataset)[index]


def cmd_ingest(args) -> int:
    dataset = parse_movielens(args.ratings, pipeline._FORMAT_ALIASES[args.format])
    if args.fixtures:
        dataset.catalog = load_item_metadata(dataset.item_ids, source=args.source,
                                             fixture_dir=args.fixtures,
                                             url_template=args.url_template)
    else:
        dataset.catalog = load_item_metadata(dataset.item_ids, source="fixture_dir",
                                             fixture_dir="/nonexistent")
    save_dataset(dataset, args.out)
    print(f"wrote {args.out}: {len(dataset.ratings)} ratings, "
          f"{len(dataset.user_ids)} users, {len(dataset.item_ids)} items")
    return 0


def cmd_profile(args) -> int:
    dataset = load_dataset(args.dataset)
    cfg = _base_config(args, variant=args.variant)
    fold = _fold_of(cfg, dataset, args.fold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prof_dir = pipeline.stage_profile_standalone(cfg, dataset, fold, out, Path(args.dataset))
    n = len(list(prof_dir.glob("*.md")))
    print(f"wrote {n} profiles to {prof_dir}")
    return 0


def cmd_embed(args) -> int:
    cfg = _base_config(args)
    cfg.embedder = EmbedderConfig(kind=args.embedder, store_path=args.store_path or "")
    profiles_dir = Path(args.profiles)
    store_path = pipeline.stage_embed_standalone(cfg, profiles_dir, Path(args.out))
    print(f"wrote {store_path}")
    print(pipeline.inspect(store_path))
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    cfg = _base_config(args)
    if args.config:
        run_cfg = pipeline.load_run_config(args.config)
        cfg.gat = run_cfg.gat
    cfg.gat = replace(cfg.gat, seed=args.seed)
    fold = _fold_of(cfg, dataset, args.fold)
    from .graph import build_graph
    from .embed import store_load

    graph = build_graph(fold.train, user_ids=dataset.user_ids, item_ids=dataset.item_ids)
    store = store_load(args.store)
    params, log = gatrec.train(graph, store, cfg.gat)
    gatrec.save_checkpoint(params, cfg.gat, args.out)
    log_path = Path(args.out).with_suffix(".log.json")
    log_path.write_text(json.dumps(asdict(log), sort_keys=True), encoding="utf-8")
    print(f"wrote {args.out}: best epoch {log.best_epoch}/{log.epochs_run}, "
          f"val loss {log.validation_loss[log.best_epoch - 1]:.5f}")
    return 0


def cmd_rerank(args) -> int:
    dataset = load_dataset(args.dataset)
    strategy = {"prompt": "prompt", "bst": "bst", "batch": "batch",
                "relevancy": "relevancy", "none": "none"}[args.strategy]
    cfg = _base_config(args, strategy=strategy, fusion_weight=args.w)
    fold = _fold_of(cfg, dataset, args.fold)
    recs = pipeline.stage_rerank_standalone(cfg, dataset, fold, Path(args.checkpoint),
                                            Path(args.store), Path(args.profiles),
                                            Path(args.out))
    print(f"wrote {recs}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.dataset)
    cfg = _base_config(args, k=args.k)
    fold = _fold_of(cfg, dataset, args.fold)
    from .evalrec import MetricsReport, emit_report, evaluate_run, relevance_sets

    rankings = pipeline.read_recs(args.recs)
    fe = evaluate_run(rankings, relevance_sets(fold.test), cfg.k,
                      cold_start_users=fold.cold_start_users,
                      fold_index=fold.fold_index)
    strategy = "unknown"
    with open(args.recs, "r", encoding="utf-8") as fh:
        fh.readline()
        first = fh.readline().split("\t")
        if len(first) > 1:
            strategy = first[1]
    report = MetricsReport(k=cfg.k, strategy=strategy, folds=[fe])
    written = emit_report([report], args.out)
    for p in written:
        print(f"wrote {p}")
    for slice_name, sm in fe.slices.items():
        print(f"{slice_name}: P@{cfg.k}={sm.precision:.4f} R@{cfg.k}={sm.recall:.4f} "
              f"NDCG@{cfg.k}={sm.ndcg:.4f} MAP@{cfg.k}={sm.map:.4f} ({sm.n_users} users)")
    return 0


def cmd_run(args) -> int:
    cfg = pipeline.load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.artifacts_dir:
        cfg.artifacts_dir = args.artifacts_dir
    reports = pipeline.run_pipeline(cfg, force=args.force)
    for report in reports:
        agg = report.aggregate()
        for slice_name, metrics in agg.items():
            cells = " ".join(f"{m}={metrics[m][0]:.4f}±{metrics[m][1]:.4f}"
                             for m in ("precision", "recall", "ndcg", "map"))
            print(f"[{report.strategy}] {slice_name}: {cells}")
    print(f"report written under {Path(cfg.artifacts_dir) / 'report'}")
    return 0


def cmd_inspect(args) -> int:
    print(pipeline.inspect(args.artifact))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="semrec",
                                     description="Hybrid profile-graph recommender pipeline")
    parser.add_argument("--seed", type=int, default=0, help="global seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse ratings and attach item metadata")
    p.add_argument("--ratings", required=True)
    p.add_argument("--format", choices=["100k", "1m"], default="100k")
    p.add_argument("--fixtures", default="")
    p.add_argument("--source", choices=["fixture_dir", "live_api"], default="fixture_dir")
    p.add_argument("--url-template", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("profile", help="generate item and user profiles")
    p.add_argument("--dataset", required=True)
    p.add_argument("--provider", choices=["mock", "remote"], default="mock")
    p.add_argument("--variant", choices=["unified", "integrated"], default="unified")
    p.add_argument("--out", required=True)
    _add_fold_args(p)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("embed", help="embed profile texts into a vector store")
    p.add_argument("--profiles", required=True)
    p.add_argument("--embedder", choices=["mock", "remote", "file"], default="mock")
    p.add_argument("--store-path", default="", help="source store for --embedder file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("train", help="train the graph attention model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--config", default="", help="run config INI supplying [gat]")
    p.add_argument("--out", required=True)
    _add_fold_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("rerank", help="rerank GAT candidates with an LLM strategy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--strategy", choices=["prompt", "bst", "batch", "relevancy", "none"],
                   default="relevancy")
    p.add_argument("--w", type=float, default=0.8, help="LLM weight in fusion")
    p.add_argument("--provider", choices=["mock", "remote"], default="mock")
    p.add_argument("--out", required=True)
    _add_fold_args(p)
    p.set_defaults(fn=cmd_rerank)

    p = sub.add_parser("evaluate", help="score recommendations against held-out ratings")
    p.add_argument("--recs", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_fold_args(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("run", help="run the whole pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true", help="recompute cached stages")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--artifacts-dir", default="")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("inspect", help="describe a pipeline artifact")
    p.add_argument("artifact")
    p.set_defaults(fn=cmd_inspect)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (pipeline.PipelineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
