"""Run configuration: one JSON artifact reproduces any command.

Every knob any subcommand consumes lives here with its default, and
``RunConfig.to_dict`` serializes all of them, so dumping a config captures
the complete recipe for a run — including the defaults the operator never
touched.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .analysis import AnalysisConfig
from .learner import TrainConfig
from .rewards import RewardParams, SuccessCriteria

__all__ = [
    "ConfigError",
    "DATASET_TAGS",
    "MixingConfig",
    "PathsConfig",
    "RunConfig",
]

DATASET_TAGS = ("pretraining", "self-improvement", "round2")


class ConfigError(ValueError):
    """A configuration that cannot describe a runnable experiment."""


@dataclass(frozen=True)
class PathsConfig:
    """Filesystem layout of one run, all relative to ``root`` unless absolute.

    ``stores`` holds one subdirectory per dataset tag, each containing the
    shard files its workers wrote.
    """

    root: str = "runs/demo"
    stores: str = "stores"
    checkpoints: str = "checkpoints"
    curves: str = "curves"
    library: str = "library.jsonl"
    judgments: str = "judgments.jsonl"
    reports: str = "reports"
    prompt_templates: str = ""  # empty: the packaged templates

    def resolve(self, name: str) -> Path:
        value = Path(getattr(self, name))
        return value if value.is_absolute() else Path(self.root) / value

    def store_dir(self, tag: str) -> Path:
        return self.resolve("stores") / tag

    def checkpoint(self, filename: str) -> Path:
        return self.resolve("checkpoints") / filename


@dataclass(frozen=True)
class MixingConfig:
    """Dataset-mixing recipe for the improvement fit.

    ``shares`` of None means an even split across whatever datasets the
    improve step is given; new skills are up-weighted within each dataset.
    """

    shares: Mapping[str, float] | None = None
    new_skill_share: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.new_skill_share < 1.0:
            raise ConfigError("new_skill_share must lie strictly between 0 and 1")
        if self.shares is not None:
            total = sum(self.shares.values())
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"mixing shares must sum to 1, got {total}")


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    backend: str = "mock"
    temperature: float = 0.0
    workers: int = 10
    repetitions: int = 5
    budget: int = 2000            # episodes per collection run
    seed: int = 0
    jitter: float = 0.05          # exploration noise during plan execution
    collect_source: str = "self-improvement"
    skills_exclude: tuple[str, ...] = ()
    analyze_curves: str = "pretrain.jsonl"  # curve log the analyze step reads
    active_checkpoint: str = "base.npz"     # the policy collect executes
    improve_datasets: tuple[str, ...] = ("pretraining", "self-improvement")
    improve_checkpoint: str = "improved.npz"
    mixing: MixingConfig = field(default_factory=MixingConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    criteria: SuccessCriteria = field(default_factory=SuccessCriteria)
    reward_params: RewardParams = field(default_factory=RewardParams)

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "remote"):
            raise ConfigError(f"backend must be mock or remote, got {self.backend!r}")
        if self.temperature < 0.0:
            raise ConfigError("temperature must be non-negative")
        if self.workers <= 0 or self.repetitions <= 0:
            raise ConfigError("workers and repetitions must be positive")
        if self.budget <= 0:
            raise ConfigError("budget must be positive")
        fleet = self.workers * self.repetitions
        if self.budget % fleet:
            raise ConfigError(
                f"budget {self.budget} must divide evenly into "
                f"workers x repetitions = {fleet} episodes per plan"
            )
        if not 0.0 <= self.jitter <= 1.0:
            raise ConfigError("jitter must lie in [0, 1]")
        if self.collect_source not in DATASET_TAGS:
            raise ConfigError(
                f"collect_source must be one of {DATASET_TAGS}, got {self.collect_source!r}"
            )
        for tag in self.improve_datasets:
            if tag not in DATASET_TAGS:
                raise ConfigError(f"unknown improve dataset tag {tag!r}")
        if not self.improve_datasets:
            raise ConfigError("improve needs at least one dataset")

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["skills_exclude"] = list(self.skills_exclude)
        payload["improve_datasets"] = list(self.improve_datasets)
        payload["mixing"]["shares"] = (
            dict(self.mixing.shares) if self.mixing.shares is not None else None
        )
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping) -> "RunConfig":
        payload = dict(payload)

        def build(klass, value, **overrides):
            if value is None:
                return klass(**overrides)
            known = {f.name for f in fields(klass)}
            unknown = set(value) - known
            if unknown:
                raise ConfigError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
            return klass(**{**value, **overrides})

        try:
            sub = {
                "paths": build(PathsConfig, payload.pop("paths", None)),
                "mixing": build(MixingConfig, payload.pop("mixing", None)),
                "analysis": build(AnalysisConfig, payload.pop("analysis", None)),
                "train": build(TrainConfig, payload.pop("train", None)),
                "criteria": build(SuccessCriteria, payload.pop("criteria", None)),
                "reward_params": build(RewardParams, payload.pop("reward_params", None)),
            }
            for key in ("skills_exclude", "improve_datasets"):
                if key in payload:
                    payload[key] = tuple(payload[key])
            known = {f.name for f in fields(cls)}
            unknown = set(payload) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            return cls(**{**payload, **sub})
        except (TypeError, ValueError) as error:
            if isinstance(error, ConfigError):
                raise
            raise ConfigError(str(error)) from error

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as error:
            raise ConfigError(f"config file {path} is not valid JSON: {error}") from None
        return cls.from_dict(payload)

    def override(self, **changes) -> "RunConfig":
        """A copy with top-level fields replaced (flag-style overrides)."""
        return replace(self, **changes)
