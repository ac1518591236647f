"""Orchestration: config -> domains -> chains -> store -> analysis files.

Everything here is a deterministic function of (config, seed); reports are
pure views over the persisted result store.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from xferbench import toy
from xferbench.config import ChainConfig, DatasetConfig
from xferbench.core import FeatureSet
from xferbench.distance import AssignmentStrategy, DistanceMatrix, distance_matrix
from xferbench.gains import (
    FactorCorrelationReport,
    GainRecord,
    aggregate_levels,
    best_source_per_target,
    factor_correlations,
    gain_record,
)
from xferbench.io import ResultStore, write_features, write_grid


def build_domains(cfg: ChainConfig) -> dict[str, toy.SynthDomainSpec]:
    specs: dict[str, toy.SynthDomainSpec] = {}
    remaining = dict(cfg.domains)
    # Mixtures may reference other domains; resolve palette domains first.
    while remaining:
        progressed = False
        for name, dom in list(remaining.items()):
            if dom.palette is not None:
                specs[name] = toy.palette_spec(name, dom.palette, dom.seed, dom.noise)
            elif all(m in specs for m in dom.mixture):
                parts = [specs[m] for m in dom.mixture]
                specs[name] = toy.mixture_spec(name, parts, dom.seed)
            else:
                continue
            del remaining[name]
            progressed = True
        if not progressed:
            raise ValueError(f"unresolvable domain mixtures: {sorted(remaining)}")
    return specs


def _caps(cfg: ChainConfig) -> tuple[int | None, int | None]:
    """(target cap, source cap) for the configured regime."""
    if cfg.regime == "small-target":
        return cfg.small_target_cap, None
    if cfg.regime == "small-source-small-target":
        return cfg.small_target_cap, cfg.small_source_cap
    return None, None


def build_task(
    cfg: ChainConfig, dataset_id: str, cap: int | None = None
) -> toy.TaskInstance:
    ds_cfg: DatasetConfig = cfg.datasets[dataset_id]
    spec = build_domains(cfg)[ds_cfg.domain]
    inst = toy.make_task(spec, ds_cfg.task, ds_cfg.n_train, ds_cfg.n_val, dataset_id)
    if cap is not None and cap < len(inst.train):
        inst = toy.TaskInstance(
            inst.dataset_id, inst.domain_label, inst.task, inst.train.subset(cap), inst.val
        )
    return inst


def _train_cfg(stage, seed: int, steps: int | None = None) -> toy.TrainConfig:
    return toy.TrainConfig(
        steps=stage.steps if steps is None else steps,
        lr=stage.lr,
        lr_candidates=stage.lr_candidates,
        schedule=stage.schedule,
        batch_size=stage.batch_size,
        seed=seed,
    )


def pretrained_model(cfg: ChainConfig, seed: int) -> toy.ToyModel:
    spec = build_domains(cfg)[cfg.pretrain_domain]
    pretrain_ids = [d for d in cfg.datasets.values() if d.domain == cfg.pretrain_domain]
    n_train = pretrain_ids[0].n_train if pretrain_ids else 128
    train_ds, _ = toy.generate_dataset(spec, n_train, 8, "pretrain")
    return toy.pretrain_backbone(train_ds, _train_cfg(cfg.pretrain, seed), cfg.hidden_dim)


def save_model(model: toy.ToyModel, path: str | Path) -> None:
    task = model.task if isinstance(model.task, str) else model.task.value
    np.savez(
        path,
        w_backbone=model.w_backbone,
        b_backbone=model.b_backbone,
        w_head=model.w_head,
        b_head=model.b_head,
        task=np.array(task),
    )


def load_model(path: str | Path) -> toy.ToyModel:
    from xferbench.core import TaskType

    data = np.load(path, allow_pickle=False)
    task_str = str(data["task"])
    task = "classification" if task_str == "classification" else TaskType(task_str)
    return toy.ToyModel(
        data["w_backbone"], data["b_backbone"], data["w_head"], data["b_head"], task
    )


def run_chains(
    cfg: ChainConfig,
    out_dir: str | Path,
    seeds: tuple[int, ...] | None = None,
    jobs: int = 1,
) -> int:
    """Run every seed x source x target chain; append new results to the store.

    Completed chains are written in a deterministic order regardless of the
    number of worker threads, and re-runs are idempotent per experiment key.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = ResultStore(out_dir / "results.jsonl")
    existing = store.existing_keys()
    seeds = cfg.seeds if seeds is None else seeds
    target_cap, source_cap = _caps(cfg)

    jobs_list = []
    for seed in seeds:
        for source_id in cfg.sources:
            for target_id in cfg.targets:
                jobs_list.append((seed, source_id, target_id))

    pretrain_cache: dict[int, toy.ToyModel] = {}
    source_cache: dict[tuple[int, str], toy.ToyModel] = {}
    task_cache: dict[tuple[str, int | None], toy.TaskInstance] = {}

    def get_task(dataset_id: str, cap: int | None) -> toy.TaskInstance:
        key = (dataset_id, cap)
        if key not in task_cache:
            task_cache[key] = build_task(cfg, dataset_id, cap)
        return task_cache[key]

    def run_one(seed: int, source_id: str, target_id: str):
        if seed not in pretrain_cache:
            pretrain_cache[seed] = pretrained_model(cfg, seed)
        model = pretrain_cache[seed]
        source = get_task(source_id, source_cap)
        target = get_task(target_id, target_cap)
        if (seed, source_id) not in source_cache:
            source_cache[(seed, source_id)] = toy.train_source_model(
                model, source, _train_cfg(cfg.source_train, seed)
            )
        return toy.run_chain(
            model,
            source,
            target,
            _train_cfg(cfg.source_train, seed),
            _train_cfg(cfg.target_train, seed),
            regime=cfg.regime,
            source_model=source_cache[(seed, source_id)],
        )

    # Cheap pre-filter so idempotent re-runs do no training work.
    def key_of(seed, source_id, target_id):
        source = cfg.datasets[source_id]
        target = cfg.datasets[target_id]
        return "|".join(
            [cfg.regime, source_id, source.task.value, target_id, target.task.value, str(seed)]
        )

    pending = [j for j in jobs_list if key_of(*j) not in existing]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda j: run_one(*j), pending))
    else:
        results = [run_one(*j) for j in pending]
    return store.append(results)


def embed_dataset_features(
    cfg: ChainConfig, dataset_id: str, model: toy.ToyModel
) -> FeatureSet:
    task = build_task(cfg, dataset_id)
    combined = np.concatenate([task.train.images, task.val.images])
    hidden = toy.hidden_activations(model, combined)
    return FeatureSet(dataset_id, task.domain_label, hidden.mean(axis=(1, 2)))


def compute_distances(
    cfg: ChainConfig,
    strategies: list[AssignmentStrategy] | None = None,
    n: int = 1000,
    seed: int = 0,
) -> dict[AssignmentStrategy, DistanceMatrix]:
    """Distance matrices over every configured chain dataset, per strategy."""
    strategies = strategies or list(AssignmentStrategy)
    model = pretrained_model(cfg, seed)
    ids = sorted(set(cfg.sources) | set(cfg.targets))
    features = [embed_dataset_features(cfg, i, model) for i in ids]
    out = {}
    for strategy in strategies:
        cap = min(n, cfg.emd_cap) if strategy is AssignmentStrategy.EMD_ONE_TO_ONE else n
        out[strategy] = distance_matrix(features, strategy, cap, seed)
    return out


def write_distance_csv(matrix: DistanceMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["target\\source", *matrix.dataset_ids])
        for i, target in enumerate(matrix.dataset_ids):
            writer.writerow([target, *[f"{v:.6f}" for v in matrix.values[i]]])


def gain_records_from_store(out_dir: str | Path) -> list[GainRecord]:
    store = ResultStore(Path(out_dir) / "results.jsonl")
    results = store.load()
    if not results:
        raise ValueError(f"no records in {store.path}")
    return [gain_record(r) for r in results]


FILTER_COMBOS = (
    ("all", "all"),
    ("within", "within"),
    ("within", "cross"),
    ("cross", "within"),
    ("cross", "cross"),
)


def analyze(cfg: ChainConfig, out_dir: str | Path) -> dict:
    """Aggregate gains, best-source rows, and factor correlations; write files."""
    out_dir = Path(out_dir)
    records = gain_records_from_store(out_dir)

    rows = []
    for dom_f, task_f in FILTER_COMBOS:
        try:
            rows.append(aggregate_levels(records, dom_f, task_f))
        except ValueError:
            continue  # filter combination not populated in this study
    best = best_source_per_target(records)
    best_rows = []
    for dom_f, task_f in FILTER_COMBOS:
        try:
            best_rows.append(aggregate_levels(best, dom_f, task_f))
        except ValueError:
            continue

    correlations: FactorCorrelationReport | None = None
    try:
        distances = compute_distances(cfg)
        correlations = factor_correlations(records, distances)
    except ValueError:
        correlations = None  # degenerate (e.g. all-tied) small stores

    analysis_dir = out_dir / "analysis"
    analysis_dir.mkdir(parents=True, exist_ok=True)
    _write_aggregate_csv(rows, analysis_dir / "aggregates.csv")
    _write_aggregate_csv(best_rows, analysis_dir / "best_source_aggregates.csv")
    _write_gains_csv(records, analysis_dir / "gains.csv")
    if correlations is not None:
        with open(analysis_dir / "correlations.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["factor", "kendall_tau"])
            for strategy, tau in correlations.distance_tau.items():
                writer.writerow([f"distance[{strategy.value}]", f"{tau:.4f}"])
            writer.writerow(["source_train_size", f"{correlations.source_size_tau:.4f}"])
    return {
        "aggregates": rows,
        "best_source_aggregates": best_rows,
        "correlations": correlations,
        "records": records,
    }


def _write_aggregate_csv(rows, path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain_transfer", "task_transfer", "pct_P", "pct_VP", "pct_N", "count"])
        for row in rows:
            writer.writerow(
                [
                    row.domain_filter,
                    row.task_filter,
                    f"{row.pct_p:.1f}",
                    f"{row.pct_vp:.1f}",
                    f"{row.pct_n:.1f}",
                    row.count,
                ]
            )


def _write_gains_csv(records: list[GainRecord], path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["target", "source", "seed", "regime", "metric", "baseline", "r", "level"]
        )
        for rec in records:
            res = rec.result
            writer.writerow(
                [
                    res.target_id,
                    res.source_id,
                    res.seed,
                    res.regime,
                    f"{res.metric.value:.6f}",
                    f"{res.baseline_metric.value:.6f}",
                    f"{rec.r:.2f}",
                    rec.level.value,
                ]
            )


def render_report(records: list[GainRecord], use_ansi: bool = False) -> str:
    """Aligned-text gain table with VP/P/I/N level tags per cell."""
    targets = sorted({r.result.target_id for r in records})
    sources = sorted({r.result.source_id for r in records})
    by_pair: dict[tuple[str, str], list[GainRecord]] = {}
    for r in records:
        by_pair.setdefault((r.result.target_id, r.result.source_id), []).append(r)

    colors = {"VP": "\x1b[32m", "P": "\x1b[92m", "I": "", "N": "\x1b[35m"}
    reset = "\x1b[0m"
    width = max(14, *(len(s) + 2 for s in sources))
    header = "target".ljust(18) + "".join(s.rjust(width) for s in sources)
    lines = [header, "-" * len(header)]
    for t in targets:
        cells = []
        for s in sources:
            recs = by_pair.get((t, s))
            if not recs:
                cells.append("-".rjust(width))
                continue
            mean_r = float(np.mean([r.r for r in recs]))
            from xferbench.gains import classify_level

            level = classify_level(mean_r).value
            cell = f"{mean_r:+.1f} {level}"
            if use_ansi and colors[level]:
                cell = colors[level] + cell + reset
            cells.append(cell.rjust(width))
        lines.append(t.ljust(18) + "".join(cells))
    lines.append("")
    lines.append("levels: VP r>10, P 2<r<=10, I -2<=r<=2, N r<-2 (mean over seeds)")
    return "\n".join(lines)
