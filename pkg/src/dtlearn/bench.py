"""Benchmark measurement and analysis: wall time / peak RSS of a run,
roofline ceilings, platform ratios and Pareto fronts.
"""
from __future__ import annotations

import csv
import json
import threading
import time
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import psutil

CSV_COLUMNS = ("label", "runtime_s", "avg_power_w", "dram_mb", "error", "freq_mhz", "flops",
               "bytes_moved")
OPTIONAL_COLUMNS = ("perf_per_watt",)


@dataclass(frozen=True)
class PlatformSample:
    """One measurement row.

    Optional fields are ``None`` when absent, never zero. ``perf_per_watt``
    holds a reported figure for rows where power itself is unknown.
    """

    label: str
    runtime_s: float
    dram_mb: float
    error: Optional[float] = None
    avg_power_w: Optional[float] = None
    freq_mhz: Optional[float] = None
    flops: Optional[float] = None
    bytes_moved: Optional[float] = None
    perf_per_watt: Optional[float] = None

    def __post_init__(self):
        if not self.runtime_s > 0:
            raise ValueError(f"{self.label}: runtime_s must be positive")
        if not self.dram_mb > 0:
            raise ValueError(f"{self.label}: dram_mb must be positive")
        if self.avg_power_w is not None and not self.avg_power_w > 0:
            raise ValueError(f"{self.label}: avg_power_w must be positive when given")

    @property
    def operational_intensity(self):
        if self.flops is None or not self.bytes_moved:
            return None
        return self.flops / self.bytes_moved

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RooflineSpec:
    peak_gflops: float
    bandwidth_gbs: float
    label: str = ""

    def __post_init__(self):
        if not (self.peak_gflops > 0 and self.bandwidth_gbs > 0):
            raise ValueError("roofline ceilings must be positive")

    @property
    def ridge(self):
        """Operational intensity where the memory and compute roofs meet."""
        return self.peak_gflops / self.bandwidth_gbs


# --------------------------------------------------------------------------
# Measurement


@dataclass
class Measurement:
    runtime_s: float
    peak_memory_bytes: int
    baseline_memory_bytes: int
    result: Any = None

    def __iter__(self):
        yield self.runtime_s
        yield self.peak_memory_bytes


def measure_recovery(run: Callable[[], Any], interval=0.01) -> Measurement:
    """Time ``run()`` and sample the process RSS every ``interval`` seconds.

    Peak RSS is an approximation of DRAM footprint. If ``run`` raises, the
    exception propagates with a ``measurement`` attribute holding the
    partial timing.
    """
    proc = psutil.Process()
    baseline = proc.memory_info().rss
    peak = [baseline]
    stop = threading.Event()

    def sampler():
        while not stop.is_set():
            peak[0] = max(peak[0], proc.memory_info().rss)
            stop.wait(interval)

    thread = threading.Thread(target=sampler, daemon=True)
    thread.start()
    start = time.perf_counter()
    try:
        result = run()
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        stop.set()
        thread.join()
        exc.measurement = Measurement(elapsed, max(peak[0], proc.memory_info().rss), baseline)
        raise
    elapsed = time.perf_counter() - start
    peak[0] = max(peak[0], proc.memory_info().rss)
    stop.set()
    thread.join()
    return Measurement(elapsed, peak[0], baseline, result)


# --------------------------------------------------------------------------
# Roofline


def roofline_attainable(spec: RooflineSpec, oi):
    """``min(peak, bandwidth * oi)`` in GFLOP/s; ``oi`` may be an array."""
    oi = np.asarray(oi, dtype=float)
    if np.any(oi <= 0):
        raise ValueError("operational intensity must be positive")
    out = np.minimum(spec.peak_gflops, spec.bandwidth_gbs * oi)
    return float(out) if out.ndim == 0 else out


def roofline_curve(spec: RooflineSpec, oi_min=0.01, oi_max=100.0, points=50):
    """Log-spaced ``(oi, attainable)`` pairs, shape ``(points, 2)``."""
    oi = np.logspace(np.log10(oi_min), np.log10(oi_max), points)
    return np.column_stack([oi, roofline_attainable(spec, oi)])


# --------------------------------------------------------------------------
# Ratios


def perf_per_watt(sample: PlatformSample) -> Optional[float]:
    """Runtime per watt (s/W), the convention of the reference tables.

    Uses ``runtime_s / avg_power_w`` when power is known, otherwise a
    reported ``perf_per_watt`` figure; ``None`` if neither is available.
    """
    if sample.avg_power_w is not None:
        return sample.runtime_s / sample.avg_power_w
    return sample.perf_per_watt


@dataclass(frozen=True)
class RatioRow:
    label: str
    speedup: float               # baseline runtime / runtime
    runtime_ratio: float         # runtime / baseline runtime
    dram_reduction: float        # baseline DRAM / DRAM
    dram_ratio: float            # DRAM / baseline DRAM
    perf_per_watt_ratio: Optional[float]   # perf/W / baseline perf/W


def ratio_report(samples: Sequence[PlatformSample], baseline_label: str):
    by_label = {s.label: s for s in samples}
    if baseline_label not in by_label:
        raise ValueError(f"baseline {baseline_label!r} not among {sorted(by_label)}")
    base = by_label[baseline_label]
    base_ppw = perf_per_watt(base)
    rows = []
    for s in samples:
        ppw = perf_per_watt(s)
        rows.append(RatioRow(
            label=s.label,
            speedup=base.runtime_s / s.runtime_s,
            runtime_ratio=s.runtime_s / base.runtime_s,
            dram_reduction=base.dram_mb / s.dram_mb,
            dram_ratio=s.dram_mb / base.dram_mb,
            perf_per_watt_ratio=(ppw / base_ppw) if ppw is not None and base_ppw else None,
        ))
    return rows


# --------------------------------------------------------------------------
# Pareto


def _objective_matrix(samples, objectives):
    cols = []
    for name, direction in objectives:
        if direction not in ("min", "max"):
            raise ValueError(f"objective direction must be 'min' or 'max', got {direction!r}")
        col = []
        for s in samples:
            value = perf_per_watt(s) if name == "perf_per_watt" else getattr(s, name, None)
            if value is None:
                raise ValueError(f"sample {s.label!r} has no value for objective {name!r}")
            col.append(value if direction == "min" else -value)
        cols.append(col)
    return np.array(cols, dtype=float).T.reshape(len(samples), len(objectives))


def parse_objectives(objectives):
    """Accept ``[("runtime_s", "min"), ...]`` or ``["runtime_s", "-error", "+x"]``
    (a leading ``+`` means maximise)."""
    out = []
    for obj in objectives:
        if isinstance(obj, str):
            if obj.startswith("+"):
                out.append((obj[1:], "max"))
            else:
                out.append((obj.lstrip("-"), "min"))
        else:
            out.append((obj[0], obj[1]))
    return out


def dominance_matrix(samples, objectives):
    """``D[i, j]`` is True when sample i dominates sample j."""
    F = _objective_matrix(samples, parse_objectives(objectives))
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    return le & lt


def pareto_front(samples: Sequence[PlatformSample], objectives):
    """Non-dominated samples in their original order; exact ties are all kept."""
    samples = list(samples)
    if not samples:
        return []
    dominated = dominance_matrix(samples, objectives).any(axis=0)
    return [s for s, d in zip(samples, dominated) if not d]


# --------------------------------------------------------------------------
# I/O


def _num(text):
    text = text.strip()
    return float(text) if text else None


def read_samples_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                values = {k: _num(row[k]) for k in CSV_COLUMNS[1:] + OPTIONAL_COLUMNS if k in row}
                out.append(PlatformSample(label=row["label"].strip(), **values))
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def write_samples_csv(samples, path, append=False):
    """Write samples; with ``append`` an existing file keeps its header."""
    path = Path(path)
    columns = list(CSV_COLUMNS)
    if any(s.perf_per_watt is not None for s in samples):
        columns.append("perf_per_watt")
    new_file = not (append and path.exists() and path.stat().st_size > 0)
    if not new_file:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        lost = set(columns) - set(header)
        if lost:
            raise ValueError(f"{path}: existing header lacks columns {sorted(lost)}")
        columns = header
    with open(path, "w" if new_file else "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(columns)
        for s in samples:
            row = []
            for c in columns:
                v = getattr(s, c)
                row.append("" if v is None else (v if c == "label" else repr(float(v))))
            writer.writerow(row)


def samples_to_json(samples):
    return [s.to_dict() for s in samples]


def samples_from_json(doc):
    names = {f.name for f in fields(PlatformSample)}
    return [PlatformSample(**{k: v for k, v in d.items() if k in names}) for d in doc]


def fixture_path(name):
    return resources.files("dtlearn.data").joinpath(name)


def load_table(name):
    """Shipped reference tables: ``"aid"`` or ``"cardiac"``."""
    files = {"aid": "aid_platforms.csv", "cardiac": "cardiac_platforms.csv"}
    with resources.as_file(fixture_path(files[name])) as p:
        return read_samples_csv(p)


def load_roofline_fixtures():
    doc = json.loads(fixture_path("roofline_platforms.json").read_text())
    return {k: RooflineSpec(v["peak_gflops"], v["bandwidth_gbs"], k)
            for k, v in doc["platforms"].items()}
