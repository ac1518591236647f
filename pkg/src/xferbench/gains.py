"""Relative transfer gains, significance levels, and meta-analysis.

A chained model's metric m(target | source) is compared against the
pretrain-only baseline m(target | pretrain) as a percent ratio, with the
sign flipped for lower-better metrics. Gains are bucketed into four
levels (VP / P / I / N) and aggregated under within/cross domain and task
filters; Kendall tau-b rank correlations relate gains to domain distance
and source size.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from xferbench.core import TaskType
from xferbench.distance import AssignmentStrategy, DistanceMatrix
from xferbench.metrics import MetricValue

BASELINE_SOURCE_ID = "__baseline__"


class GainLevel(enum.Enum):
    VERY_POSITIVE = "VP"
    POSITIVE = "P"
    INSIGNIFICANT = "I"
    NEGATIVE = "N"


@dataclass(frozen=True)
class TransferResult:
    """One (source, target) chain outcome plus its pretrain-only baseline."""

    source_id: str
    source_task: TaskType
    target_id: str
    target_task: TaskType
    metric: MetricValue
    baseline_metric: MetricValue
    source_domain: str
    target_domain: str
    regime: str = "small-target"
    source_train_size: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.metric.task_type is not self.baseline_metric.task_type:
            raise ValueError("metric and baseline must share a task type")

    @property
    def experiment_key(self) -> str:
        return "|".join(
            [
                self.regime,
                self.source_id,
                self.source_task.value,
                self.target_id,
                self.target_task.value,
                str(self.seed),
            ]
        )


@dataclass(frozen=True)
class GainRecord:
    result: TransferResult
    r: float
    level: GainLevel

    @property
    def within_domain(self) -> bool:
        return self.result.source_domain == self.result.target_domain

    @property
    def within_task_type(self) -> bool:
        return self.result.source_task is self.result.target_task


@dataclass(frozen=True)
class AggregateRow:
    domain_filter: str  # all | within | cross
    task_filter: str  # all | within | cross
    pct_p: float  # % with r > 2 (includes VP; nested thresholds)
    pct_vp: float  # % with r > 10
    pct_n: float  # % with r < -2
    count: int


def relative_gain(m: MetricValue, baseline: MetricValue) -> float:
    """Percent gain over the baseline; sign-flipped for lower-better metrics."""
    if m.task_type is not baseline.task_type:
        raise ValueError("metric and baseline must share a task type")
    if baseline.value == 0:
        raise ValueError("undefined gain: baseline metric is zero")
    r = (m.value / baseline.value - 1.0) * 100.0
    return r if m.higher_is_better else -r


def classify_level(r: float) -> GainLevel:
    """VP if r > 10, P if 2 < r <= 10, N if r < -2, else I.

    Boundary values (+-2, 10) fall into the less extreme bucket.
    """
    if not np.isfinite(r):
        raise ValueError("gain must be finite")
    if r > 10:
        return GainLevel.VERY_POSITIVE
    if r > 2:
        return GainLevel.POSITIVE
    if r < -2:
        return GainLevel.NEGATIVE
    return GainLevel.INSIGNIFICANT


def gain_record(result: TransferResult) -> GainRecord:
    r = relative_gain(result.metric, result.baseline_metric)
    return GainRecord(result, r, classify_level(r))


def _apply_filters(
    records: list[GainRecord], domain_filter: str, task_filter: str
) -> list[GainRecord]:
    out = []
    for rec in records:
        if domain_filter == "within" and not rec.within_domain:
            continue
        if domain_filter == "cross" and rec.within_domain:
            continue
        if task_filter == "within" and not rec.within_task_type:
            continue
        if task_filter == "cross" and rec.within_task_type:
            continue
        out.append(rec)
    return out


def aggregate_levels(
    records: list[GainRecord],
    domain_filter: str = "all",
    task_filter: str = "all",
) -> AggregateRow:
    """Percentage of filtered experiments with P / VP / N gains.

    P counts every r > 2, so it always includes the VP experiments.
    """
    for name, value in (("domain_filter", domain_filter), ("task_filter", task_filter)):
        if value not in ("all", "within", "cross"):
            raise ValueError(f"{name} must be all/within/cross, got {value!r}")
    filtered = _apply_filters(records, domain_filter, task_filter)
    if not filtered:
        raise ValueError(
            f"no records match filters domain={domain_filter}, task={task_filter}"
        )
    rs = np.array([rec.r for rec in filtered])
    n = len(rs)
    return AggregateRow(
        domain_filter,
        task_filter,
        pct_p=100.0 * np.count_nonzero(rs > 2) / n,
        pct_vp=100.0 * np.count_nonzero(rs > 10) / n,
        pct_n=100.0 * np.count_nonzero(rs < -2) / n,
        count=n,
    )


def best_source_per_target(records: list[GainRecord]) -> list[GainRecord]:
    """For each target task, the record with maximal gain (first wins ties)."""
    best: dict[tuple[str, str], GainRecord] = {}
    order: list[tuple[str, str]] = []
    for rec in records:
        key = (rec.result.target_id, rec.result.target_task.value)
        if key not in best:
            best[key] = rec
            order.append(key)
        elif rec.r > best[key].r:
            best[key] = rec
    return [best[k] for k in order]


def kendall_tau(x: list[float] | np.ndarray, y: list[float] | np.ndarray) -> float:
    """Tie-corrected Kendall tau-b via O(n^2) pair counting."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D sequences")
    n = len(x)
    if n < 2:
        raise ValueError("need at least two observations")
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = sx[iu] * sy[iu]
    concordant = np.count_nonzero(prod > 0)
    discordant = np.count_nonzero(prod < 0)
    n0 = n * (n - 1) // 2
    tx = np.count_nonzero(sx[iu] == 0)
    ty = np.count_nonzero(sy[iu] == 0)
    if tx == n0 or ty == n0:
        raise ValueError("degenerate input: one variable is entirely tied")
    return float((concordant - discordant) / np.sqrt((n0 - tx) * (n0 - ty)))


@dataclass(frozen=True)
class FactorCorrelationReport:
    """Kendall tau of gains against each distance strategy and source size."""

    distance_tau: dict[AssignmentStrategy, float] = field(default_factory=dict)
    source_size_tau: float = float("nan")


def factor_correlations(
    records: list[GainRecord],
    distances: dict[AssignmentStrategy, DistanceMatrix],
) -> FactorCorrelationReport:
    """Correlate gains with negated domain distance (per strategy) and size.

    Positive tau for a distance strategy means closer domains transfer
    better under that strategy's notion of distance.
    """
    rs = np.array([rec.r for rec in records])
    taus = {}
    for strategy, matrix in distances.items():
        dvals = np.array(
            [matrix[rec.result.target_id, rec.result.source_id] for rec in records]
        )
        taus[strategy] = kendall_tau(rs, -dvals)
    sizes = np.array([rec.result.source_train_size for rec in records], dtype=np.float64)
    size_tau = kendall_tau(rs, sizes)
    return FactorCorrelationReport(taus, size_tau)
