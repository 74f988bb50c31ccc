"""Measured time series: the Trajectory container, synthetic corruption
(noise, downsampling, hidden-state masking) and CSV ingestion.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DtlearnError

log = logging.getLogger(__name__)

OHIO_COLUMNS = ("timestamp", "glucose", "basal_insulin", "bolus_insulin", "carbs")
OHIO_NOMINAL_SPACING_S = 300.0


class TrajectoryFormatError(DtlearnError, ValueError):
    """A trajectory file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled multivariate time series with inputs and an observability mask.

    ``states`` keeps every channel, including hidden ones; ``mask`` says which
    channels count as measured. Loss functions must only look at masked-true
    channels, the hidden values stay around for oracle comparisons.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    mask: np.ndarray
    state_names: tuple = ()
    input_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.size == 0:
            inputs = np.zeros((times.size, 0))
        elif inputs.ndim == 1:
            inputs = inputs[:, None]
        mask = np.asarray(self.mask, dtype=bool).reshape(-1)
        n_samples = times.size
        if n_samples < 2:
            raise ValueError(f"trajectory needs at least 2 samples, got {n_samples}")
        if states.shape[0] != n_samples or inputs.shape[0] != n_samples:
            raise ValueError("times, states and inputs disagree on sample count")
        if mask.size != states.shape[1]:
            raise ValueError("mask length must equal the number of state channels")
        if not mask.any():
            raise ValueError("at least one channel must be observed")
        if not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        state_names = tuple(self.state_names) or tuple(f"x{i}" for i in range(states.shape[1]))
        input_names = tuple(self.input_names) or tuple(f"u{i}" for i in range(inputs.shape[1]))
        if len(state_names) != states.shape[1] or len(input_names) != inputs.shape[1]:
            raise ValueError("channel names do not match array widths")
        for name, value in (("times", times), ("states", states), ("inputs", inputs),
                            ("mask", mask), ("state_names", state_names),
                            ("input_names", input_names)):
            object.__setattr__(self, name, value)

    @property
    def n_samples(self):
        return self.times.size

    @property
    def n_states(self):
        return self.states.shape[1]

    @property
    def n_inputs(self):
        return self.inputs.shape[1]

    def observed(self):
        """States restricted to measured channels, shape (N, n_observed)."""
        return self.states[:, self.mask]

    def replace(self, **changes) -> "Trajectory":
        return replace(self, **changes)

    def equals(self, other: "Trajectory") -> bool:
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.mask, other.mask))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian measurement noise.

    Give either ``snr_db`` (per observed channel, relative to that channel's
    mean power) or ``sigma`` (absolute standard deviation, scalar or one per
    state channel). ``snr_db=inf`` or ``sigma=0`` means no noise.

    In SNR mode the drawn noise is rescaled so its sample power hits the
    requested level exactly; in sigma mode draws are used as-is.
    """

    snr_db: Optional[float] = None
    sigma: Optional[object] = None
    seed: int = 0

    def __post_init__(self):
        if (self.snr_db is None) == (self.sigma is None):
            raise ValueError("NoiseSpec needs exactly one of snr_db or sigma")
        if self.snr_db is not None and math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")
        if self.sigma is not None and np.any(np.asarray(self.sigma, dtype=float) < 0):
            raise ValueError("sigma must be non-negative")


def rng(seed):
    """Seeded PCG64 generator; the one RNG used for all synthetic data."""
    return np.random.Generator(np.random.PCG64(seed))


def corrupt(clean: Trajectory, spec: NoiseSpec) -> Trajectory:
    """Add zero-mean Gaussian noise to the observed state channels."""
    states = clean.states.copy()
    gen = rng(spec.seed)
    draws = gen.standard_normal(states.shape)
    for j in np.flatnonzero(clean.mask):
        if spec.snr_db is not None:
            if math.isinf(spec.snr_db) and spec.snr_db > 0:
                continue
            power = np.mean(clean.states[:, j] ** 2)
            sigma = math.sqrt(power / 10.0 ** (spec.snr_db / 10.0))
            noise = draws[:, j] - draws[:, j].mean()
            noise = noise / math.sqrt(np.mean(noise ** 2))
        else:
            sigma = float(np.broadcast_to(np.asarray(spec.sigma, dtype=float),
                                          (clean.n_states,))[j])
            if sigma == 0.0:
                continue
            noise = draws[:, j]
        states[:, j] = clean.states[:, j] + sigma * noise
    return clean.replace(states=states)


def empirical_snr_db(clean, noisy):
    """10*log10(signal power / noise power) for 1-D arrays."""
    clean = np.asarray(clean, dtype=float)
    noise = np.asarray(noisy, dtype=float) - clean
    return 10.0 * math.log10(np.mean(clean ** 2) / np.mean(noise ** 2))


def downsample(traj: Trajectory, keep_every: int) -> Trajectory:
    if int(keep_every) != keep_every or keep_every < 1:
        raise ValueError(f"keep_every must be a positive integer, got {keep_every!r}")
    idx = np.arange(0, traj.n_samples, int(keep_every))
    if idx.size < 2:
        raise ValueError(f"downsampling by {keep_every} leaves {idx.size} sample(s)")
    return traj.replace(times=traj.times[idx], states=traj.states[idx],
                        inputs=traj.inputs[idx])


def mask_hidden(traj: Trajectory, observable: Sequence[bool]) -> Trajectory:
    observable = np.asarray(observable, dtype=bool).reshape(-1)
    if observable.size != traj.n_states:
        raise ValueError("observable must have one entry per state channel")
    if not observable.any():
        raise ValueError("at least one channel must stay observable")
    return traj.replace(mask=observable)


# --------------------------------------------------------------------------
# CSV formats


def _fmt(x):
    return repr(float(x))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write ``t,<states>,<inputs>,<mask_...>``; floats are written round-trip exact."""
    header = (["t"] + list(traj.state_names) + list(traj.input_names)
              + [f"mask_{name}" for name in traj.state_names])
    mask = [str(int(b)) for b in traj.mask]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(traj.n_samples):
            writer.writerow([_fmt(traj.times[k])]
                            + [_fmt(v) for v in traj.states[k]]
                            + [_fmt(v) for v in traj.inputs[k]] + mask)


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TrajectoryFormatError("empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise TrajectoryFormatError("first column must be 't'", line=1)
    mask_cols = [i for i, h in enumerate(header) if h.startswith("mask_")]
    n = len(mask_cols)
    if n == 0 or mask_cols != list(range(len(header) - n, len(header))):
        raise TrajectoryFormatError("mask_* columns must close the header", line=1)
    state_names = tuple(header[1:1 + n])
    if tuple(h[5:] for h in header[-n:]) != state_names:
        raise TrajectoryFormatError("mask columns do not match state columns", line=1)
    input_names = tuple(header[1 + n:len(header) - n])
    values, mask = [], None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise TrajectoryFormatError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            values.append([float(v) for v in row[:len(header) - n]])
            row_mask = tuple(int(v) for v in row[-n:])
        except ValueError as exc:
            raise TrajectoryFormatError(str(exc), line=lineno) from None
        if any(b not in (0, 1) for b in row_mask):
            raise TrajectoryFormatError("mask entries must be 0 or 1", line=lineno)
        if mask is None:
            mask = row_mask
        elif row_mask != mask:
            raise TrajectoryFormatError("mask changes between rows", line=lineno)
    if len(values) < 2:
        raise TrajectoryFormatError("need at least 2 data rows")
    data = np.asarray(values)
    try:
        return Trajectory(times=data[:, 0], states=data[:, 1:1 + n], inputs=data[:, 1 + n:],
                          mask=np.array(mask, dtype=bool), state_names=state_names,
                          input_names=input_names)
    except ValueError as exc:
        raise TrajectoryFormatError(str(exc)) from None


def _parse_timestamp(text):
    text = text.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()


def load_ohio_format(path, schema=None, nominal_spacing=OHIO_NOMINAL_SPACING_S):
    """Read an OhioT1D-shaped CSV into a list of trajectory segments.

    ``schema`` optionally maps the canonical column names (``timestamp``,
    ``glucose``, ``basal_insulin``, ``bolus_insulin``, ``carbs``) to the
    names used in the file. Rows with an empty glucose field carry no
    measurement and are skipped; empty insulin/carb fields read as 0.
    Consecutive samples further apart than twice the nominal spacing start
    a new segment. Segments shorter than two samples are dropped.
    """
    schema = {name: name for name in OHIO_COLUMNS} | dict(schema or {})
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(rows):
        raise TrajectoryFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    try:
        col = {name: header.index(schema[name]) for name in OHIO_COLUMNS}
    except ValueError as exc:
        raise TrajectoryFormatError(f"missing column: {exc}", line=1) from None

    samples = []
    last_t = None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise TrajectoryFormatError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        try:
            t = _parse_timestamp(row[col["timestamp"]])
            fields = {name: row[col[name]].strip() for name in OHIO_COLUMNS[1:]}
            nums = {k: (float(v) if v else None) for k, v in fields.items()}
        except ValueError as exc:
            raise TrajectoryFormatError(str(exc), line=lineno) from None
        if last_t is not None and t <= last_t:
            raise TrajectoryFormatError("timestamps must be strictly increasing", line=lineno)
        last_t = t
        if nums["glucose"] is None:
            continue
        dose = (nums["basal_insulin"] or 0.0) + (nums["bolus_insulin"] or 0.0)
        samples.append((t, nums["glucose"], dose, nums["carbs"] or 0.0))
    if not samples:
        raise TrajectoryFormatError(f"{path}: no glucose samples")

    data = np.asarray(samples)
    breaks = np.flatnonzero(np.diff(data[:, 0]) > 2.0 * nominal_spacing) + 1
    segments = []
    for chunk in np.split(data, breaks):
        if chunk.shape[0] < 2:
            log.warning("dropping %d-sample segment at t=%s", chunk.shape[0], chunk[0, 0])
            continue
        segments.append(Trajectory(times=chunk[:, 0], states=chunk[:, 1:2], inputs=chunk[:, 2:4],
                                   mask=[True], state_names=("glucose",),
                                   input_names=("insulin", "carbs"),
                                   meta={"source": str(path), "time_unit": "s"}))
    return segments
