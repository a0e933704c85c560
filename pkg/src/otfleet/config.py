"""Experiment configuration: one serializable record drives every command.

Defaults follow the shipped benchmark (50 demos per task, 10 percent
threshold quantile adapted in 2.5-point steps, rewind factor 0.2, three
rounds of thirty episodes). Any output an experiment writes embeds the
config digest so results remain traceable to their exact settings.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .detector import DetectorConfig, RewindConfig
from .errors import ConfigError, DomainError, ParseError
from .ot.sinkhorn import SinkhornConfig
from .sim.tasks import TASKS

CONFIG_FORMAT_VERSION = 1
OPERATOR_KINDS = ("oracle", "human_console")


@dataclass(frozen=True)
class ExperimentConfig:
    """Every tunable an experiment run reads, in one flat record."""

    tasks: tuple = ("pour", "hang", "pick_place", "fold")
    demo_count: int = 50
    calibration_episodes: int = 48

    delta: float = 10.0
    delta_step: float = 2.5
    warmup_min_successes: int = 5
    min_prefix_fraction: float = 0.25
    stride: int = 4
    rewind_epsilon: float = 0.2
    calibration_summary: str = "max_prefix"

    sinkhorn_regularization: float = 0.05
    sinkhorn_max_iterations: int = 500
    sinkhorn_marginal_tolerance: float = 1e-6

    fleet_robots: int = 4
    fleet_operators: int = 2
    operator_kind: str = "oracle"

    rounds: int = 3
    episodes_per_round: int = 30
    initial_skill: float = 1.0 / 3.0
    post_train_gain: float = 0.4
    post_train_normalizer: float = 400.0

    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise ConfigError("config must name at least one task")
        for task in self.tasks:
            if task not in TASKS:
                raise ConfigError(
                    f"unknown task {task!r}; known tasks: {', '.join(sorted(TASKS))}"
                )
        if self.demo_count < 1:
            raise DomainError("demo_count must be >= 1")
        if self.calibration_episodes < 1:
            raise DomainError("calibration_episodes must be >= 1")
        if self.fleet_robots < 1:
            raise DomainError("fleet_robots must be >= 1")
        if self.fleet_operators < 0:
            raise DomainError("fleet_operators must be >= 0")
        if self.operator_kind not in OPERATOR_KINDS:
            raise ConfigError(
                f"operator_kind must be one of {OPERATOR_KINDS}, "
                f"got {self.operator_kind!r}"
            )
        if self.rounds < 1:
            raise DomainError("rounds must be >= 1")
        if self.episodes_per_round < 1:
            raise DomainError("episodes_per_round must be >= 1")
        if not 0.0 <= self.initial_skill <= 1.0:
            raise DomainError("initial_skill must lie in [0, 1]")
        if self.seed < 0:
            raise DomainError("seed must be a non-negative integer")
        # delegate detector/solver field validation to their own types
        self.detector_config()

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            delta=self.delta,
            delta_step=self.delta_step,
            warmup_min_successes=self.warmup_min_successes,
            min_prefix_fraction=self.min_prefix_fraction,
            stride=self.stride,
            rewind=RewindConfig(epsilon=self.rewind_epsilon),
            solver=self.sinkhorn_config(),
            calibration_summary=self.calibration_summary,
        )

    def sinkhorn_config(self) -> SinkhornConfig:
        return SinkhornConfig(
            regularization=self.sinkhorn_regularization,
            max_iterations=self.sinkhorn_max_iterations,
            marginal_tolerance=self.sinkhorn_marginal_tolerance,
        )

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        record = asdict(self)
        record["tasks"] = list(self.tasks)
        record["config_version"] = CONFIG_FORMAT_VERSION
        return record

    def digest(self) -> str:
        """Short stable fingerprint of the full serialized config."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


def config_from_dict(record: dict) -> ExperimentConfig:
    if not isinstance(record, dict):
        raise ParseError("config document must be a mapping")
    record = dict(record)
    record.pop("config_version", None)
    unknown = sorted(set(record) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
    return ExperimentConfig(**record)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        record = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"config {path} is not valid YAML: {exc}") from exc
    if record is None:
        record = {}
    return config_from_dict(record)


def save_config(config: ExperimentConfig, path) -> None:
    path = Path(path)
    document = yaml.safe_dump(config.to_dict(), sort_keys=True)
    try:
        path.write_text(document, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write config {path}: {exc}") from exc
