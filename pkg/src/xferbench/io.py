"""File formats and the append-only result store.

Feature files: magic "XFRF1", little-endian u32 count, u32 dim, then
count*dim little-endian float32 values; a JSON sidecar (path + ".json")
carries dataset_id, domain_label, and sample_seed. A CSV alternative holds
one vector per row.

Grid dumps: magic "XFRG1", u32 height, u32 width, u32 channels, one u8
dtype code per channel (0 = float32, 1 = uint16), then channel-major
little-endian payload.

Results: JSON lines, one TransferResult per line with an explicit
schema_version; every line parses on its own and appends are idempotent by
experiment key.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from xferbench.core import FeatureSet, TaskType
from xferbench.gains import TransferResult
from xferbench.metrics import MetricValue

FEATURE_MAGIC = b"XFRF1"
GRID_MAGIC = b"XFRG1"
SCHEMA_VERSION = 1

_GRID_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u2")}
_GRID_CODES = {v: k for k, v in _GRID_DTYPES.items()}


def write_features(features: FeatureSet, path: str | Path) -> None:
    path = Path(path)
    vectors = np.ascontiguousarray(features.vectors, dtype="<f4")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", vectors.shape[0], vectors.shape[1]))
        f.write(vectors.tobytes())
    sidecar = {
        "dataset_id": features.dataset_id,
        "domain_label": features.domain_label,
        "sample_seed": features.sample_seed,
        "dim": int(vectors.shape[1]),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def _load_sidecar(path: Path) -> dict:
    sidecar_path = Path(str(path) + ".json")
    if sidecar_path.exists():
        return json.loads(sidecar_path.read_text())
    return {"dataset_id": path.stem, "domain_label": "unknown", "sample_seed": 0}


def load_features(path: str | Path) -> FeatureSet:
    """Load a FeatureSet from the binary or CSV format (by extension)."""
    path = Path(path)
    if path.suffix == ".csv":
        vectors = np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
    else:
        raw = path.read_bytes()
        if raw[:5] != FEATURE_MAGIC:
            raise ValueError(f"bad magic in {path}: expected {FEATURE_MAGIC!r}")
        count, dim = struct.unpack("<II", raw[5:13])
        expected = 13 + count * dim * 4
        if len(raw) < expected:
            raise ValueError(f"truncated payload at offset {len(raw)} (expected {expected} bytes)")
        vectors = np.frombuffer(raw[13:expected], dtype="<f4").reshape(count, dim)
    meta = _load_sidecar(path)
    if "dim" in meta and meta["dim"] != vectors.shape[1]:
        raise ValueError(
            f"dimension mismatch: sidecar says {meta['dim']}, file has {vectors.shape[1]}"
        )
    return FeatureSet(
        meta.get("dataset_id", path.stem),
        meta.get("domain_label", "unknown"),
        vectors,
        meta.get("sample_seed", 0),
    )


def write_features_csv(features: FeatureSet, path: str | Path) -> None:
    np.savetxt(path, features.vectors, delimiter=",", fmt="%.9g")
    sidecar = {
        "dataset_id": features.dataset_id,
        "domain_label": features.domain_label,
        "sample_seed": features.sample_seed,
        "dim": int(features.dim),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def write_grid(channels: list[np.ndarray], path: str | Path) -> None:
    """Write same-shape 2-D channels; float channels as f32, integer as u16."""
    if not channels:
        raise ValueError("need at least one channel")
    h, w = channels[0].shape
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<III", h, w, len(channels)))
        codes = []
        for ch in channels:
            if ch.shape != (h, w):
                raise ValueError("all channels must share one shape")
            codes.append(1 if np.issubdtype(ch.dtype, np.integer) else 0)
        f.write(bytes(codes))
        for ch, code in zip(channels, codes):
            f.write(np.ascontiguousarray(ch, dtype=_GRID_DTYPES[code]).tobytes())


def load_grid(path: str | Path) -> list[np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:5] != GRID_MAGIC:
        raise ValueError(f"bad magic in {path}: expected {GRID_MAGIC!r}")
    h, w, n = struct.unpack("<III", raw[5:17])
    codes = list(raw[17 : 17 + n])
    offset = 17 + n
    channels = []
    for code in codes:
        dtype = _GRID_DTYPES[code]
        nbytes = h * w * dtype.itemsize
        if len(raw) < offset + nbytes:
            raise ValueError(f"truncated payload at offset {len(raw)}")
        channels.append(np.frombuffer(raw[offset : offset + nbytes], dtype=dtype).reshape(h, w))
        offset += nbytes
    return channels


def result_to_dict(result: TransferResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment_key": result.experiment_key,
        "source_id": result.source_id,
        "source_task": result.source_task.value,
        "target_id": result.target_id,
        "target_task": result.target_task.value,
        "metric": result.metric.value,
        "baseline_metric": result.baseline_metric.value,
        "source_domain": result.source_domain,
        "target_domain": result.target_domain,
        "regime": result.regime,
        "source_train_size": result.source_train_size,
        "seed": result.seed,
    }


def result_from_dict(d: dict) -> TransferResult:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"schema version mismatch: got {d.get('schema_version')}, expected {SCHEMA_VERSION}"
        )
    source_task = TaskType(d["source_task"])
    target_task = TaskType(d["target_task"])
    return TransferResult(
        source_id=d["source_id"],
        source_task=source_task,
        target_id=d["target_id"],
        target_task=target_task,
        metric=MetricValue(target_task, d["metric"]),
        baseline_metric=MetricValue(target_task, d["baseline_metric"]),
        source_domain=d["source_domain"],
        target_domain=d["target_domain"],
        regime=d["regime"],
        source_train_size=d["source_train_size"],
        seed=d["seed"],
    )


class ResultStore:
    """Append-only JSON-lines store with duplicate-key detection."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def load(self) -> list[TransferResult]:
        if not self.path.exists():
            return []
        results = []
        for line in self.path.read_text().splitlines():
            if line.strip():
                results.append(result_from_dict(json.loads(line)))
        return results

    def existing_keys(self) -> set[str]:
        return {r.experiment_key for r in self.load()}

    def append(self, results: list[TransferResult]) -> int:
        """Append new records; records whose key already exists are skipped.

        Returns the number of records actually written.
        """
        keys = self.existing_keys()
        written = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as f:
            for r in results:
                if r.experiment_key in keys:
                    continue
                f.write(json.dumps(result_to_dict(r), sort_keys=True) + "\n")
                keys.add(r.experiment_key)
                written += 1
        return written
