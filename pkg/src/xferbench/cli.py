"""Command-line entry point tying the harness together.

Subcommands: gen-data, train-source, run-chains, distance, analyze,
report, and config show-defaults. All commands are deterministic functions
of (config, seed); reports are pure views over the result store.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from xferbench import harness, toy
from xferbench.config import (
    ChainConfig,
    config_defaults_toml,
    default_study_config,
    load_config,
)
from xferbench.distance import AssignmentStrategy
from xferbench.io import write_features, write_grid


def _load(args) -> ChainConfig:
    cfg = load_config(args.config) if args.config else default_study_config()
    overrides = {}
    if getattr(args, "regime", None):
        overrides["regime"] = args.regime
    if getattr(args, "emd_cap", None):
        overrides["emd_cap"] = args.emd_cap
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _seeds(args, cfg: ChainConfig) -> tuple[int, ...]:
    return (args.seed,) if args.seed is not None else cfg.seeds


def cmd_show_defaults(args) -> int:
    sys.stdout.write(config_defaults_toml())
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    for dataset_id in cfg.datasets:
        task = harness.build_task(cfg, dataset_id)
        ds_dir = out / "datasets" / dataset_id
        ds_dir.mkdir(parents=True, exist_ok=True)
        for split_name, split in (("train", task.train), ("val", task.val)):
            for i in range(len(split)):
                channels = [
                    *[split.images[i, :, :, c] for c in range(3)],
                    split.seg[i].astype(np.uint16),
                    split.depth[i],
                ]
                write_grid(channels, ds_dir / f"{split_name}_{i:04d}.xfrg")
            boxes = [
                [
                    {"x": b.x, "y": b.y, "w": b.w, "h": b.h, "class_id": b.class_id}
                    for b in img_boxes
                ]
                for img_boxes in split.boxes
            ]
            (ds_dir / f"{split_name}_annotations.json").write_text(
                json.dumps({"boxes": boxes, "task": task.task.value}, sort_keys=True) + "\n"
            )
        print(f"wrote {dataset_id}: {len(task.train)} train / {len(task.val)} val grids")
    return 0


def cmd_train_source(args) -> int:
    cfg = _load(args)
    out = Path(args.out) / "models"
    out.mkdir(parents=True, exist_ok=True)
    for seed in _seeds(args, cfg):
        pretrain_path = out / f"pretrain_seed{seed}.npz"
        if pretrain_path.exists():
            model = harness.load_model(pretrain_path)
            print(f"cached {pretrain_path.name}")
        else:
            model = harness.pretrained_model(cfg, seed)
            harness.save_model(model, pretrain_path)
            print(f"trained {pretrain_path.name}")
        for source_id in cfg.sources:
            path = out / f"source_{source_id}_seed{seed}.npz"
            if path.exists():
                print(f"cached {path.name}")
                continue
            source = harness.build_task(cfg, source_id)
            trained = toy.train_source_model(
                model, source, harness._train_cfg(cfg.source_train, seed)
            )
            harness.save_model(trained, path)
            print(f"trained {path.name}")
    return 0


def cmd_run_chains(args) -> int:
    cfg = _load(args)
    written = harness.run_chains(cfg, args.out, _seeds(args, cfg), jobs=args.jobs)
    print(f"wrote {written} new result(s) to {Path(args.out) / 'results.jsonl'}")
    return 0


def cmd_distance(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    strategies = (
        [AssignmentStrategy(args.strategy)] if args.strategy else list(AssignmentStrategy)
    )
    matrices = harness.compute_distances(cfg, strategies, seed=args.seed or 0)
    model = harness.pretrained_model(cfg, args.seed or 0)
    for dataset_id in sorted(set(cfg.sources) | set(cfg.targets)):
        features = harness.embed_dataset_features(cfg, dataset_id, model)
        write_features(features, out / f"features_{dataset_id}.xfrf")
    for strategy, matrix in matrices.items():
        path = out / f"distance_{strategy.value}.csv"
        harness.write_distance_csv(matrix, path)
        print(f"wrote {path}")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load(args)
    try:
        harness.analyze(cfg, args.out)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote analysis files under {Path(args.out) / 'analysis'}")
    return 0


def cmd_report(args) -> int:
    try:
        records = harness.gain_records_from_store(args.out)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    text = harness.render_report(records, use_ansi=args.ansi)
    report_path = Path(args.out) / "analysis" / "report.txt"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xferbench",
        description="Toy-scale transfer-learning study harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="TOML experiment config (default: built-in study)")
        p.add_argument("--seed", type=int, default=None, help="run a single seed")
        if needs_out:
            p.add_argument("--out", required=True, help="working/output directory")

    p = sub.add_parser("config", help="configuration helpers")
    config_sub = p.add_subparsers(dest="config_command", required=True)
    sd = config_sub.add_parser("show-defaults", help="print the default config as TOML")
    sd.set_defaults(func=cmd_show_defaults)

    p = sub.add_parser("gen-data", help="materialize toy datasets as grid dumps")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-source", help="cache pretrain + source backbones")
    common(p)
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("run-chains", help="run transfer chains, append results")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel chain workers")
    p.add_argument("--regime", choices=("small-target", "full-target", "small-source-small-target"))
    p.set_defaults(func=cmd_run_chains)

    p = sub.add_parser("distance", help="emit domain-distance matrices")
    common(p)
    p.add_argument("--strategy", choices=[s.value for s in AssignmentStrategy])
    p.add_argument("--emd-cap", type=int, default=None, help="EMD sampling cap")
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("analyze", help="gains, aggregates, and correlations")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="render gain tables from the store")
    p.add_argument("--out", required=True)
    p.add_argument("--ansi", action="store_true", help="colorize level tags")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
