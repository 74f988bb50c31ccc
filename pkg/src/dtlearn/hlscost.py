"""Analytical cost model for pipelined HLS loops.

Covers initiation-interval (II) feasibility under loop-carried RAW/WAR
dependencies and memory-port limits, plus latency and throughput of a
pipelined loop. This mirrors the usual trial-II probing: start at II=1 and
raise it until no dependency or port conflict remains.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class Dependency(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["RAW", "WAR"]
    latency: int = Field(ge=1, description="cycles from producing to consuming stage")
    distance: int = Field(default=1, ge=1, description="iteration distance")


class ArrayAccess(BaseModel):
    model_config = ConfigDict(extra="forbid")

    array_id: str
    reads_per_iter: int = Field(default=0, ge=0)
    writes_per_iter: int = Field(default=0, ge=0)


class LoopSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trip_count: int = Field(ge=1)
    depth: int = Field(ge=1, description="latency of one iteration in cycles")
    deps: list[Dependency] = Field(default_factory=list)
    array_accesses: list[ArrayAccess] = Field(default_factory=list)


class ArrayPartition(BaseModel):
    model_config = ConfigDict(extra="forbid")

    partitioned: Literal["complete", "none"] = "none"
    ports_per_bank: int = Field(default=2, ge=1)


class PartitionSpec(BaseModel):
    """Per-array storage. Arrays not listed use ``default``."""

    model_config = ConfigDict(extra="forbid")

    arrays: dict[str, ArrayPartition] = Field(default_factory=dict)
    default: ArrayPartition = Field(default_factory=lambda: ArrayPartition(partitioned="complete"))

    def for_array(self, array_id) -> ArrayPartition:
        return self.arrays.get(array_id, self.default)


FULLY_PARTITIONED = PartitionSpec()


@dataclass(frozen=True)
class Violation:
    kind: str            # "RAW", "WAR" or "resource"
    detail: str
    required_ii: int


def _active_deps(loop: LoopSpec):
    # a dependency whose distance reaches past the last iteration never fires
    return [d for d in loop.deps if d.distance < loop.trip_count]


def recurrence_bound(loop: LoopSpec) -> int:
    return max([math.ceil(d.latency / d.distance) for d in _active_deps(loop)], default=1)


def _port_limited(loop: LoopSpec, partition: PartitionSpec):
    """(array_id, accesses, ports) for unpartitioned arrays. A single
    iteration never overlaps another, so it has no port conflicts."""
    if loop.trip_count < 2:
        return []
    out = []
    for acc in loop.array_accesses:
        storage = partition.for_array(acc.array_id)
        if storage.partitioned == "complete":
            continue
        out.append((acc.array_id, acc.reads_per_iter + acc.writes_per_iter, storage.ports_per_bank))
    return out


def resource_bound(loop: LoopSpec, partition: Optional[PartitionSpec] = None) -> int:
    return max([math.ceil(a / p) for _, a, p in _port_limited(loop, partition or FULLY_PARTITIONED)],
               default=1)


def min_feasible_ii(loop: LoopSpec, partition: Optional[PartitionSpec] = None) -> int:
    """Smallest II satisfying every recurrence and port constraint."""
    return max(1, recurrence_bound(loop), resource_bound(loop, partition))


def hazard_check(loop: LoopSpec, ii: int, partition: Optional[PartitionSpec] = None):
    """Dependencies (and, given a partition, port limits) violated at ``ii``.

    A dependency is violated when ``latency > ii * distance``. Port conflicts
    are only reported when ``partition`` is passed.
    """
    if ii < 1:
        raise ValueError("II must be >= 1")
    out = []
    for d in _active_deps(loop):
        if d.latency > ii * d.distance:
            out.append(Violation(d.kind, f"latency {d.latency} > II {ii} x distance {d.distance}",
                                 math.ceil(d.latency / d.distance)))
    if partition is not None:
        for array_id, accesses, ports in _port_limited(loop, partition):
            need = math.ceil(accesses / ports)
            if need > ii:
                out.append(Violation("resource", f"array {array_id}: {accesses} accesses on "
                                     f"{ports} port(s)", need))
    return out


def loop_latency(loop: LoopSpec, ii: int, partition: Optional[PartitionSpec] = None) -> int:
    """Cycles to finish all iterations: ``depth + (trip_count - 1) * ii``."""
    floor = min_feasible_ii(loop, partition)
    if ii < floor:
        raise ValueError(f"II={ii} is below the feasible minimum {floor}")
    return loop.depth + (loop.trip_count - 1) * ii


def throughput_estimate(loop: LoopSpec, ii: int, clock_mhz: float) -> float:
    """Steady-state iterations per second."""
    if not clock_mhz > 0:
        raise ValueError("clock_mhz must be positive")
    if ii < 1:
        raise ValueError("II must be >= 1")
    return clock_mhz * 1e6 / ii


def feasibility_table(loop: LoopSpec, partition: Optional[PartitionSpec] = None,
                      clock_mhz: float = 173.0, max_ii: Optional[int] = None):
    """One row per candidate II from 1 up to ``max(3, min_feasible_ii)``."""
    floor = min_feasible_ii(loop, partition)
    top = max(3, floor) if max_ii is None else max_ii
    rows = []
    for ii in range(1, top + 1):
        violations = hazard_check(loop, ii, partition)
        feasible = not violations
        rows.append({
            "ii": ii,
            "feasible": feasible,
            "violations": [f"{v.kind}: {v.detail}" for v in violations],
            "latency_cycles": loop.depth + (loop.trip_count - 1) * ii if feasible else None,
            "throughput_iter_per_s": throughput_estimate(loop, ii, clock_mhz),
        })
    return rows


def load_specs(path):
    """Read a JSON document holding a ``loop`` and optional ``partition``,
    or a bare LoopSpec."""
    with open(path) as fh:
        text = fh.read()
    doc = json.loads(text)
    if isinstance(doc, dict) and "loop" in doc:
        extra = set(doc) - {"loop", "partition", "clock_mhz"}
        if extra:
            raise ValueError(f"unknown keys: {sorted(extra)}")
        loop = LoopSpec.model_validate(doc["loop"])
        partition = PartitionSpec.model_validate(doc["partition"]) if "partition" in doc else None
        return loop, partition, doc.get("clock_mhz", 173.0)
    return LoopSpec.model_validate(doc), None, 173.0
