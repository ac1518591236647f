"""Appearance-based domain distance between datasets.

The core measure is the average Euclidean distance from each target
embedding to its nearest source embedding; it is deliberately asymmetric
and captures how well the source *includes* the target. Three sibling
assignment strategies (exact one-to-one EMD, the mirrored
source-to-closest-target average, and the symmetric mean of both
directions) are provided for correlation studies.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from xferbench.core import FeatureSet


class AssignmentStrategy(enum.Enum):
    EMD_ONE_TO_ONE = "emd"
    TARGET_TO_CLOSEST_SOURCE = "target_to_closest_source"
    SOURCE_TO_CLOSEST_TARGET = "source_to_closest_target"
    SYMMETRIC_AVERAGE = "symmetric_average"


@dataclass(frozen=True)
class DistanceMatrix:
    """Asymmetric dataset distances; rows are targets, columns are sources."""

    dataset_ids: tuple[str, ...]
    values: np.ndarray  # (n, n) float, D[target][source]

    def __getitem__(self, pair: tuple[str, str]) -> float:
        target, source = pair
        return float(
            self.values[self.dataset_ids.index(target), self.dataset_ids.index(source)]
        )


def _fisher_yates_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded Fisher-Yates shuffle of range(n), one integers() draw per swap.

    Spelled out (rather than rng.permutation) so the sampling contract is an
    explicit algorithm that an independent re-implementation can reproduce.
    """
    idx = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def sample_features(features: FeatureSet, n: int = 1000, seed: int = 0) -> FeatureSet:
    """Deterministic uniform sample without replacement.

    The same (dataset, seed, n) always yields the same subset, so a dataset
    is represented by identical images whether used as target or source.
    n >= N returns the full set in original order.
    """
    total = len(features)
    if total == 0:
        raise ValueError("empty feature set")
    if n >= total:
        return FeatureSet(features.dataset_id, features.domain_label, features.vectors, seed)
    rng = np.random.default_rng(seed)
    idx = np.sort(_fisher_yates_indices(total, rng)[:n])
    return FeatureSet(features.dataset_id, features.domain_label, features.vectors[idx], seed)


def pairwise_distances(a: FeatureSet, b: FeatureSet) -> np.ndarray:
    """Exact Euclidean distances, |a| x |b|."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    va = a.vectors.astype(np.float64)
    vb = b.vectors.astype(np.float64)
    diff = va[:, None, :] - vb[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Exact minimum-cost assignment; returns the column for each row.

    Backed by scipy's linear_sum_assignment (Jonker-Volgenant), which is
    exact; the test suite cross-checks against factorial enumeration.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def domain_distance(
    target: FeatureSet,
    source: FeatureSet,
    strategy: AssignmentStrategy = AssignmentStrategy.TARGET_TO_CLOSEST_SOURCE,
) -> float:
    """Average per-image assignment distance under the chosen strategy."""
    d = pairwise_distances(target, source)
    if strategy is AssignmentStrategy.TARGET_TO_CLOSEST_SOURCE:
        return float(d.min(axis=1).mean())
    if strategy is AssignmentStrategy.SOURCE_TO_CLOSEST_TARGET:
        return float(d.min(axis=0).mean())
    if strategy is AssignmentStrategy.SYMMETRIC_AVERAGE:
        return float((d.min(axis=1).mean() + d.min(axis=0).mean()) / 2.0)
    if strategy is AssignmentStrategy.EMD_ONE_TO_ONE:
        if len(target) != len(source):
            raise ValueError("EMD requires equal sample counts")
        perm = hungarian(d)
        return float(d[np.arange(len(target)), perm].mean())
    raise ValueError(f"unknown strategy {strategy}")


def distance_matrix(
    all_features: list[FeatureSet],
    strategy: AssignmentStrategy = AssignmentStrategy.TARGET_TO_CLOSEST_SOURCE,
    n: int = 1000,
    seed: int = 0,
) -> DistanceMatrix:
    """Distances for every ordered (target, source) pair of datasets."""
    if strategy is AssignmentStrategy.EMD_ONE_TO_ONE:
        # One-to-one assignment needs equal counts in every pair.
        n = min(n, min(len(f) for f in all_features))
    sampled = [sample_features(f, n, seed) for f in all_features]
    ids = tuple(f.dataset_id for f in all_features)
    size = len(sampled)
    values = np.zeros((size, size))
    for t in range(size):
        for s in range(size):
            values[t, s] = domain_distance(sampled[t], sampled[s], strategy)
    return DistanceMatrix(ids, values)
