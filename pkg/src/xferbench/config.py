"""Declarative experiment plans (TOML) for the toy transfer study."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from xferbench.core import TaskType

REGIMES = ("small-target", "full-target", "small-source-small-target")

# Per-regime sample caps.
SMALL_TARGET_CAP = 150
SMALL_SOURCE_CAP = 1500


@dataclass(frozen=True)
class DomainConfig:
    domain_id: str
    palette: int | None = None  # index into the built-in palettes
    mixture: tuple[str, ...] = ()  # other domain ids; inclusion by construction
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if (self.palette is None) == (not self.mixture):
            raise ValueError(f"domain {self.domain_id}: set exactly one of palette/mixture")


@dataclass(frozen=True)
class DatasetConfig:
    dataset_id: str
    domain: str
    task: TaskType
    n_train: int = 64
    n_val: int = 32
    nms: bool = False


@dataclass(frozen=True)
class StageTrainConfig:
    steps: int = 150
    lr: float = 0.2
    lr_candidates: tuple[float, ...] = ()
    schedule: str = "constant"
    batch_size: int = 8


@dataclass(frozen=True)
class ChainConfig:
    experiment_id: str = "toy-study"
    regime: str = "small-target"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    hidden_dim: int = 8
    small_target_cap: int = SMALL_TARGET_CAP
    small_source_cap: int = SMALL_SOURCE_CAP
    emd_cap: int = 300  # EMD sampling cap; exact Hungarian is O(n^3)
    domains: dict[str, DomainConfig] = field(default_factory=dict)
    datasets: dict[str, DatasetConfig] = field(default_factory=dict)
    pretrain_domain: str = "pretrain"
    pretrain: StageTrainConfig = field(default_factory=lambda: StageTrainConfig(steps=250))
    source_train: StageTrainConfig = field(default_factory=lambda: StageTrainConfig(steps=250))
    target_train: StageTrainConfig = field(default_factory=lambda: StageTrainConfig(steps=30))
    sources: tuple[str, ...] = ()
    targets: tuple[str, ...] = ()

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.small_target_cap <= 0 or self.small_source_cap <= 0:
            raise ValueError("regime caps must be positive")
        for name in (*self.sources, *self.targets):
            if name not in self.datasets:
                raise ValueError(f"unknown dataset id {name!r} referenced in chains")
        for ds in self.datasets.values():
            if ds.domain not in self.domains:
                raise ValueError(f"dataset {ds.dataset_id}: unknown domain {ds.domain!r}")
        if self.pretrain_domain not in self.domains:
            raise ValueError(f"unknown pretrain domain {self.pretrain_domain!r}")


def _stage(d: dict, default: StageTrainConfig) -> StageTrainConfig:
    return StageTrainConfig(
        steps=d.get("steps", default.steps),
        lr=d.get("lr", default.lr),
        lr_candidates=tuple(d.get("lrs", default.lr_candidates)),
        schedule=d.get("schedule", default.schedule),
        batch_size=d.get("batch_size", default.batch_size),
    )


def load_config(path: str | Path) -> ChainConfig:
    with open(path, "rb") as f:
        data = tomllib.load(f)
    return config_from_dict(data)


def config_from_dict(data: dict) -> ChainConfig:
    exp = data.get("experiment", {})
    domains = {
        name: DomainConfig(
            name,
            palette=d.get("palette"),
            mixture=tuple(d.get("mixture", ())),
            noise=d.get("noise", 0.05),
            seed=d.get("seed", 0),
        )
        for name, d in data.get("domains", {}).items()
    }
    datasets = {
        name: DatasetConfig(
            name,
            domain=d["domain"],
            task=TaskType(d["task"]),
            n_train=d.get("n_train", 64),
            n_val=d.get("n_val", 32),
            nms=d.get("nms", False),
        )
        for name, d in data.get("datasets", {}).items()
    }
    chains = data.get("chains", {})
    train = data.get("train", {})
    return ChainConfig(
        experiment_id=exp.get("id", "toy-study"),
        regime=exp.get("regime", "small-target"),
        seeds=tuple(exp.get("seeds", (0, 1, 2, 3, 4))),
        hidden_dim=exp.get("hidden_dim", 8),
        small_target_cap=exp.get("small_target_cap", SMALL_TARGET_CAP),
        small_source_cap=exp.get("small_source_cap", SMALL_SOURCE_CAP),
        emd_cap=exp.get("emd_cap", 300),
        domains=domains,
        datasets=datasets,
        pretrain_domain=data.get("pretrain", {}).get("domain", "pretrain"),
        pretrain=_stage(data.get("pretrain", {}), StageTrainConfig(steps=250)),
        source_train=_stage(train.get("source", {}), StageTrainConfig(steps=250)),
        target_train=_stage(train.get("target", {}), StageTrainConfig(steps=30)),
        sources=tuple(chains.get("sources", ())),
        targets=tuple(chains.get("targets", ())),
    )


def default_study_config() -> ChainConfig:
    """The bundled domain study: broad + two narrow + one disjoint domain."""
    seg = TaskType.SEMANTIC_SEGMENTATION.value
    return config_from_dict(
        {
            "experiment": {"id": "toy-domain-study", "seeds": [0, 1, 2, 3, 4]},
            "domains": {
                "narrow_a": {"palette": 0, "seed": 11},
                "narrow_b": {"palette": 1, "seed": 12},
                "broad": {"mixture": ["narrow_a", "narrow_b"], "seed": 13},
                "disjoint": {"palette": 2, "seed": 14},
                "pretrain": {"mixture": ["narrow_a", "narrow_b"], "seed": 15},
            },
            "datasets": {
                "seg_a": {"domain": "narrow_a", "task": seg, "n_train": 96},
                "seg_b": {"domain": "narrow_b", "task": seg, "n_train": 96},
                "seg_broad": {"domain": "broad", "task": seg, "n_train": 96},
                "seg_disjoint": {"domain": "disjoint", "task": seg, "n_train": 96},
                "seg_target_a": {"domain": "narrow_a", "task": seg, "n_train": 12},
                "seg_target_b": {"domain": "narrow_b", "task": seg, "n_train": 12},
                "pretrain_ds": {"domain": "pretrain", "task": seg, "n_train": 128},
            },
            "pretrain": {"domain": "pretrain", "steps": 250, "lr": 0.3},
            "train": {
                "source": {"steps": 250, "lr": 0.3},
                "target": {"steps": 30, "lr": 0.3},
            },
            "chains": {
                "sources": ["seg_a", "seg_b", "seg_broad", "seg_disjoint"],
                "targets": ["seg_target_a", "seg_target_b"],
            },
        }
    )


def config_defaults_toml() -> str:
    """The default study rendered as a TOML document."""
    cfg = default_study_config()
    lines = [
        "[experiment]",
        f'id = "{cfg.experiment_id}"',
        f'regime = "{cfg.regime}"',
        f"seeds = {list(cfg.seeds)}",
        f"hidden_dim = {cfg.hidden_dim}",
        f"small_target_cap = {cfg.small_target_cap}",
        f"small_source_cap = {cfg.small_source_cap}",
        f"emd_cap = {cfg.emd_cap}",
        "",
    ]
    for name, dom in cfg.domains.items():
        lines.append(f"[domains.{name}]")
        if dom.mixture:
            lines.append(f"mixture = {[m for m in dom.mixture]!r}".replace("'", '"'))
        else:
            lines.append(f"palette = {dom.palette}")
        lines.append(f"noise = {dom.noise}")
        lines.append(f"seed = {dom.seed}")
        lines.append("")
    for name, ds in cfg.datasets.items():
        lines.append(f"[datasets.{name}]")
        lines.append(f'domain = "{ds.domain}"')
        lines.append(f'task = "{ds.task.value}"')
        lines.append(f"n_train = {ds.n_train}")
        lines.append(f"n_val = {ds.n_val}")
        lines.append(f"nms = {str(ds.nms).lower()}")
        lines.append("")
    lines.append("[pretrain]")
    lines.append(f'domain = "{cfg.pretrain_domain}"')
    for stage_name, stage in (("pretrain", cfg.pretrain),):
        del stage_name
        lines.append(f"steps = {stage.steps}")
        lines.append(f"lr = {stage.lr}")
        lines.append(f"batch_size = {stage.batch_size}")
    lines.append("")
    for stage_name, stage in (("source", cfg.source_train), ("target", cfg.target_train)):
        lines.append(f"[train.{stage_name}]")
        lines.append(f"steps = {stage.steps}")
        lines.append(f"lr = {stage.lr}")
        lines.append(f"lrs = {list(stage.lr_candidates)}")
        lines.append(f'schedule = "{stage.schedule}"')
        lines.append(f"batch_size = {stage.batch_size}")
        lines.append("")
    lines.append("[chains]")
    lines.append(f"sources = {[s for s in cfg.sources]!r}".replace("'", '"'))
    lines.append(f"targets = {[t for t in cfg.targets]!r}".replace("'", '"'))
    return "\n".join(lines) + "\n"
