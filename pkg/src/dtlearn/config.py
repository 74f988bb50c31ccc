"""Run configuration documents for the command-line tool.

Each subcommand reads one JSON document. Unknown keys are rejected so that a
typo fails loudly instead of silently falling back to a default.
"""
from __future__ import annotations

import json
from importlib import resources
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .gradcheck import MAX_HIDDEN, MAX_SAMPLES, MAX_STATES
from .hlscost import LoopSpec, PartitionSpec
from .recovery import RecoveryConfig

FORMAT_VERSION = 1


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NoiseSection(Strict):
    snr_db: Optional[float] = None
    sigma: Optional[float] = Field(default=None, ge=0)
    seed: Optional[int] = None    # defaults to the run seed

    @model_validator(mode="after")
    def _one_of(self):
        if (self.snr_db is None) == (self.sigma is None):
            raise ValueError("give exactly one of snr_db or sigma")
        return self


class LibrarySection(Strict):
    n: int = Field(ge=1)
    m: int = Field(default=0, ge=0)
    order: int = Field(default=2, ge=0)
    state_names: list[str] = Field(default_factory=list)


class RecoverySection(Strict):
    """Mirror of RecoveryConfig; the seed comes from the run."""

    preset: Optional[Literal["linear_1d", "bergman_hidden"]] = None
    epochs: Optional[int] = Field(default=None, ge=1)
    learning_rate: Optional[float] = Field(default=None, ge=0)
    physics_weight: Optional[float] = Field(default=None, ge=0)
    sparsity_weight: Optional[float] = Field(default=None, ge=0)
    prune_threshold: Optional[float] = Field(default=None, ge=0)
    epsilon: Optional[float] = Field(default=None, gt=0)
    substeps: Optional[int] = Field(default=None, ge=1)
    hidden_dim: Optional[int] = Field(default=None, ge=1)
    refit_epochs: Optional[int] = Field(default=None, ge=0)
    theta_learning_rate: Optional[float] = Field(default=None, ge=0)
    z0_learning_rate: Optional[float] = Field(default=None, ge=0)
    optimizer: Optional[Literal["adam", "sgd"]] = None
    physics_warmup: Optional[int] = Field(default=None, ge=0)
    theta_warmup: Optional[int] = Field(default=None, ge=0)
    physics_ramp: Optional[int] = Field(default=None, ge=0)
    physics_ramp_start: Optional[float] = Field(default=None, gt=0, le=1)
    hidden_scale: Optional[float] = Field(default=None, gt=0)
    lr_decay: Optional[float] = Field(default=None, gt=0, le=1)
    theta_init: Optional[list[float]] = None
    z0_init: Optional[list[float]] = None
    hidden_prior: Optional[bool] = None

    def build(self, seed: int) -> RecoveryConfig:
        values = recovery_preset(self.preset) if self.preset else {}
        values.update(self.model_dump(exclude={"preset"}, exclude_none=True))
        values["seed"] = seed
        for key in ("theta_init", "z0_init"):
            if values.get(key) is not None:
                values[key] = tuple(values[key])
        return RecoveryConfig(**values)


class IdentifiabilitySection(Strict):
    horizon: Optional[float] = Field(default=None, gt=0)
    relative_delta: float = Field(default=0.1, gt=0)
    tolerance: float = Field(default=0.01, gt=0)


class SimulateConfig(Strict):
    format_version: Literal[1] = 1
    seed: int = Field(default=0, ge=0)
    model: Literal["bergman", "ecgsyn"] = "bergman"
    theta: Optional[Union[list[float], dict[str, float]]] = None
    inputs: Optional[dict] = None
    x0: Optional[list[float]] = None
    T: Optional[float] = Field(default=None, gt=0)
    N: Optional[int] = Field(default=None, ge=2)
    substeps: int = Field(default=10, ge=1)
    observed: Optional[list[bool]] = None
    noise: Optional[NoiseSection] = None


class RecoverConfig(Strict):
    format_version: Literal[1] = 1
    seed: int = Field(default=0, ge=0)
    trajectory: Union[str, list[str]]
    model: Literal["bergman", "ecgsyn", "library"] = "library"
    library: Optional[LibrarySection] = None
    recovery: RecoverySection = Field(default_factory=RecoverySection)
    workers: int = Field(default=1, ge=1)
    identifiability: Optional[IdentifiabilitySection] = None

    @model_validator(mode="after")
    def _library_given(self):
        if self.model == "library" and self.library is None:
            raise ValueError("model 'library' needs a 'library' section")
        return self


class RooflinePlatform(Strict):
    peak_gflops: float = Field(gt=0)
    bandwidth_gbs: float = Field(gt=0)


class RooflineConfig(Strict):
    format_version: Literal[1] = 1
    seed: int = 0
    platforms: Optional[dict[str, RooflinePlatform]] = None   # None: shipped fixture
    oi_min: float = Field(default=0.01, gt=0)
    oi_max: float = Field(default=100.0, gt=0)
    points: int = Field(default=50, ge=2)


class ParetoConfig(Strict):
    format_version: Literal[1] = 1
    seed: int = 0
    table: str = "aid"            # shipped name ("aid", "cardiac") or CSV path
    objectives: list[str] = Field(default_factory=lambda: ["runtime_s", "avg_power_w", "dram_mb"],
                                  min_length=1)


class BenchConfig(Strict):
    format_version: Literal[1] = 1
    seed: int = Field(default=0, ge=0)
    label: str = "desk"
    recover: RecoverConfig
    avg_power_w: Optional[float] = Field(default=None, gt=0)
    results_csv: Optional[str] = None    # appended to; default <out>/results.csv
    reference_table: Optional[str] = None
    baseline: Optional[str] = None
    objectives: Optional[list[str]] = None
    roofline: Optional[RooflineConfig] = None


class GradcheckConfig(Strict):
    format_version: Literal[1] = 1
    seed: int = Field(default=0, ge=0)
    hidden_dim: int = Field(default=4, ge=1, le=MAX_HIDDEN)
    n: int = Field(default=2, ge=1, le=MAX_STATES)
    m: int = Field(default=1, ge=0, le=MAX_STATES)
    N: int = Field(default=8, ge=3, le=MAX_SAMPLES)
    seeds: int = Field(default=5, ge=1, le=100)
    coordinates: int = Field(default=100, ge=1, le=10_000)
    tolerance: float = Field(default=1e-4, gt=0)
    corrupt_gradient: bool = False     # negative-control hook


class HlsConfig(Strict):
    format_version: Literal[1] = 1
    seed: int = 0
    loop: LoopSpec
    partition: Optional[PartitionSpec] = None
    clock_mhz: float = Field(default=173.0, gt=0)
    max_ii: Optional[int] = Field(default=None, ge=1)


COMMAND_CONFIGS = {
    "simulate": SimulateConfig,
    "recover": RecoverConfig,
    "bench": BenchConfig,
    "roofline": RooflineConfig,
    "pareto": ParetoConfig,
    "gradcheck": GradcheckConfig,
    "hlscost": HlsConfig,
}


def recovery_preset(name: str) -> dict:
    doc = json.loads(resources.files("dtlearn.data").joinpath("recovery_configs.json").read_text())
    if name not in doc or name == "format_version":
        raise KeyError(f"unknown recovery preset {name!r}")
    return dict(doc[name])


def load_config(command: str, doc: Optional[dict]):
    """Validate a config document for ``command``; ``None`` means all defaults.

    A bare LoopSpec document is accepted for ``hlscost``.
    """
    cls = COMMAND_CONFIGS[command]
    doc = {} if doc is None else doc
    if command == "hlscost" and "trip_count" in doc:
        doc = {"loop": doc}
    return cls.model_validate(doc)
