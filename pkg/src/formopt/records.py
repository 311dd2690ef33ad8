"""Append-only store of simulation results plus the part registry.

Storage is JSON Lines (one record per line, UTF-8): append-only, durable
and diff-friendly. A sidecar ``parts.json`` maps part ids to a stored
complexity scalar and a point-cloud path. Appends are serialized through
a single writer lock; readers see a consistent prefix of the file.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Optional

TARGET_NAMES = ("L1", "L2", "L3", "L4", "L5", "L6", "L7")
SOURCES = ("automated", "human", "initial_predictor", "random")

TARGET_SUM_TOL = 1e-6


class RecordValidationError(ValueError):
    """A record violates the schema or one of its invariants."""


class StoreSchemaError(ValueError):
    """A record does not match the schema established by the store."""


class MalformedLineError(ValueError):
    """A line of the result file is not valid JSON or not a valid record."""


@dataclass
class JobMeta:
    iteration: int = 0
    cycle: int = 0
    walltime_s: float = 0.0
    energy_j: float = 0.0
    progress: float = 1.0
    terminated_early: bool = False
    source: str = "automated"
    failed: bool = False

    def validate(self):
        if self.iteration < 0 or self.cycle < 0:
            raise RecordValidationError("iteration and cycle must be >= 0")
        if self.walltime_s < 0 or self.energy_j < 0:
            raise RecordValidationError("walltime_s and energy_j must be >= 0")
        if not 0.0 <= self.progress <= 1.0:
            raise RecordValidationError(f"progress {self.progress} outside [0, 1]")
        if self.terminated_early and self.progress >= 1.0:
            raise RecordValidationError("terminated_early requires progress < 1.0")
        if self.source not in SOURCES:
            raise RecordValidationError(f"unknown source {self.source!r}")

    def to_dict(self) -> dict:
        d = {
            "iteration": self.iteration,
            "cycle": self.cycle,
            "walltime_s": self.walltime_s,
            "energy_j": self.energy_j,
            "progress": self.progress,
            "terminated_early": self.terminated_early,
            "source": self.source,
        }
        if self.failed:
            d["failed"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "JobMeta":
        return cls(
            iteration=d["iteration"],
            cycle=d["cycle"],
            walltime_s=d["walltime_s"],
            energy_j=d["energy_j"],
            progress=d["progress"],
            terminated_early=d["terminated_early"],
            source=d["source"],
            failed=d.get("failed", False),
        )


@dataclass
class SimulationRecord:
    part_id: str
    inputs: dict[str, float]
    targets: dict[str, float]
    meta: JobMeta = field(default_factory=JobMeta)

    def validate(self, input_names: Optional[Iterable[str]] = None):
        self.meta.validate()
        missing = [t for t in TARGET_NAMES if t not in self.targets]
        if missing:
            raise RecordValidationError(f"targets missing {missing}")
        for name in TARGET_NAMES:
            v = self.targets[name]
            if not math.isfinite(v) or not 0.0 <= v <= 100.0:
                raise RecordValidationError(f"target {name}={v} outside [0, 100]")
        total = sum(self.targets[t] for t in TARGET_NAMES)
        partial = self.meta.terminated_early and self.meta.progress < 1.0
        if not partial and not self.meta.failed:
            if abs(total - 100.0) > TARGET_SUM_TOL:
                raise RecordValidationError(
                    f"targets L1..L7 sum to {total}, expected 100 +- {TARGET_SUM_TOL}"
                )
        if input_names is not None:
            expected = list(input_names)
            got = list(self.inputs)
            if got != expected:
                raise RecordValidationError(
                    f"input keys {got} do not match parameter names {expected}"
                )
        for name, v in self.inputs.items():
            if not math.isfinite(v):
                raise RecordValidationError(f"input {name}={v} is not finite")

    def to_dict(self) -> dict:
        return {
            "part_id": self.part_id,
            "inputs": dict(self.inputs),
            "targets": dict(self.targets),
            "meta": self.meta.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationRecord":
        return cls(
            part_id=d["part_id"],
            inputs=dict(d["inputs"]),
            targets=dict(d["targets"]),
            meta=JobMeta.from_dict(d["meta"]),
        )

    @property
    def trainable(self) -> bool:
        """Usable for surrogate training: converged, not failed."""
        return not self.meta.terminated_early and not self.meta.failed


@dataclass
class DataFilter:
    mode: str = "all"  # all | complexity | part
    part_id: Optional[str] = None
    complexity_band: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.mode not in ("all", "complexity", "part"):
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if self.mode == "part" and self.part_id is None:
            raise ValueError("mode='part' requires part_id")
        if self.mode == "complexity":
            if self.complexity_band is None:
                raise ValueError("mode='complexity' requires complexity_band")
            lo, hi = self.complexity_band
            if lo > hi:
                raise ValueError(f"complexity band ({lo}, {hi}) has low > high")


class PartRegistry:
    """Sidecar parts.json: part_id -> {complexity in [0,1], cloud_path}."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._parts: dict[str, dict] = {}
        if self.path.exists():
            self._parts = json.loads(self.path.read_text(encoding="utf-8"))

    def register(self, part_id: str, complexity: float, cloud_path: Optional[str] = None):
        if not 0.0 <= complexity <= 1.0:
            raise ValueError(f"complexity {complexity} outside [0, 1]")
        self._parts[part_id] = {"complexity": complexity, "cloud_path": cloud_path}
        self._save()

    def complexity(self, part_id: str) -> Optional[float]:
        entry = self._parts.get(part_id)
        return None if entry is None else entry["complexity"]

    def cloud_path(self, part_id: str) -> Optional[str]:
        entry = self._parts.get(part_id)
        return None if entry is None else entry.get("cloud_path")

    def part_ids(self) -> list[str]:
        return list(self._parts)

    def _save(self):
        self.path.write_text(
            json.dumps(self._parts, indent=2) + "\n", encoding="utf-8"
        )


class ResultStore:
    """Single-writer, multi-reader JSONL store of SimulationRecords.

    The first appended record fixes the input/target schema; later appends
    must match it exactly.
    """

    def __init__(self, path: Path, registry: Optional[PartRegistry] = None):
        self.path = Path(path)
        self.registry = registry
        self._lock = threading.Lock()
        self._input_names: Optional[list[str]] = None
        self._count = 0
        if self.path.exists():
            for rec in self._iter_records():
                if self._input_names is None:
                    self._input_names = list(rec.inputs)
                self._count += 1

    def __len__(self) -> int:
        return self._count

    @property
    def input_names(self) -> Optional[list[str]]:
        return None if self._input_names is None else list(self._input_names)

    def append(self, record: SimulationRecord) -> int:
        record.validate()
        with self._lock:
            if self._input_names is not None:
                got = list(record.inputs)
                if got != self._input_names:
                    raise StoreSchemaError(
                        f"input keys {got} do not match store schema {self._input_names}"
                    )
            line = json.dumps(record.to_dict()) + "\n"
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
            if self._input_names is None:
                self._input_names = list(record.inputs)
            index = self._count
            self._count += 1
            return index

    def _iter_records(self):
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = SimulationRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise MalformedLineError(
                        f"malformed record at line {lineno}: {exc}"
                    ) from exc
                yield rec

    def query(self, flt: Optional[DataFilter] = None) -> list[SimulationRecord]:
        flt = flt or DataFilter()
        if not self.path.exists():
            return []
        records = list(self._iter_records())
        if flt.mode == "all":
            return records
        if flt.mode == "part":
            return [r for r in records if r.part_id == flt.part_id]
        # complexity band; records for unregistered parts are excluded
        lo, hi = flt.complexity_band
        out = []
        for r in records:
            c = self.registry.complexity(r.part_id) if self.registry else None
            if c is not None and lo <= c <= hi:
                out.append(r)
        return out

    def observed_ranges(self, flt, specs) -> dict:
        """Per-parameter (min, max) for continuous, sorted value set for discrete.

        ``specs`` is an iterable of objects with ``name`` and ``kind``
        attributes (see candidates.ParameterSpec).
        """
        records = self.query(flt)
        if not records:
            raise ValueError("no observations after filtering")
        out = {}
        for spec in specs:
            values = [r.inputs[spec.name] for r in records]
            if spec.kind == "continuous":
                out[spec.name] = (min(values), max(values))
            else:
                out[spec.name] = sorted(set(values))
        return out
