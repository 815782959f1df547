"""Run configuration: model, synthetic corpus, training, evaluation, seed, output.

Configs are YAML mappings; every unknown key is an error so that typos never
fall back silently to defaults. A minimal config::

    model: micro            # preset name, path to a model YAML, or a mapping
    corpus: {num_speakers: 8, utts_per_speaker: 25, train_per_speaker: 20}
    train: {batch_size: 16, steps_per_epoch: 400, lr_max: 2.0e-3, head_lr_scale: 10.0}
    eval: {durations: [full, 5, 2, 1]}
    seed: 0
    out: runs/micro
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import yaml

from .errors import ConfigError
from .evaluator import Duration, parse_duration
from .model import ModelConfig, _strict
from .trainer import TrainConfig

PRESETS = {
    "default": ModelConfig.default,
    "micro": ModelConfig.micro,
    "baseline": ModelConfig.baseline,
}


@dataclass
class CorpusConfig:
    num_speakers: int = 8
    utts_per_speaker: int = 25
    train_per_speaker: int = 20
    min_duration: float = 3.0
    max_duration: float = 6.0

    def validate(self) -> None:
        if self.num_speakers < 2:
            raise ConfigError("corpus.num_speakers must be >= 2")
        if not 0 < self.train_per_speaker < self.utts_per_speaker:
            raise ConfigError("corpus.train_per_speaker must leave at least one held-out utterance")
        if not 0 < self.min_duration <= self.max_duration:
            raise ConfigError("corpus durations must satisfy 0 < min_duration <= max_duration")


@dataclass
class EvalConfig:
    durations: list = field(default_factory=lambda: ["full", 5, 2, 1])

    def parsed(self) -> list[Duration]:
        try:
            return [parse_duration(str(d)) for d in self.durations]
        except ValueError as exc:
            raise ConfigError(f"eval.durations: {exc}") from None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.micro)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out: Optional[str] = None

    def validate(self) -> None:
        self.model.validate()
        self.corpus.validate()
        self.eval.parsed()
        if self.train.batch_size < 1 or self.train.epochs < 1:
            raise ConfigError("train.batch_size and train.epochs must be >= 1")
        if self.train.steps_per_epoch is not None and self.train.steps_per_epoch < 1:
            raise ConfigError("train.steps_per_epoch must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.to_dict()
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def model_config_from(value, base_dir: Path = Path(".")) -> ModelConfig:
    """Resolve a preset name, a YAML path, or a mapping (``preset`` key optional)."""
    if isinstance(value, str):
        if value in PRESETS:
            return PRESETS[value]()
        path = Path(value) if Path(value).is_absolute() else base_dir / value
        return model_config_from(_load_yaml(path), path.parent)
    if not isinstance(value, dict):
        raise ConfigError(f"model: expected a preset name, path or mapping, got {value!r}")
    value = copy.deepcopy(value)
    preset = value.pop("preset", None)
    if preset is None:
        return ModelConfig.from_dict(value)
    if preset not in PRESETS:
        raise ConfigError(f"model.preset: unknown preset {preset!r} (choose from {sorted(PRESETS)})")
    cfg = PRESETS[preset]()
    for key, sub in value.items():
        if key in ("mrfe", "backbone"):
            if not isinstance(sub, dict):
                raise ConfigError(f"model.{key}: expected a mapping")
            target = getattr(cfg, key)
            known = {f.name for f in fields(target)}
            for k, v in sub.items():
                if k not in known:
                    raise ConfigError(f"model.{key}: unknown key {k!r}")
                setattr(target, k, v)
        elif key in {f.name for f in fields(ModelConfig)}:
            setattr(cfg, key, sub)
        else:
            raise ConfigError(f"model: unknown key {key!r}")
    return cfg


def _load_yaml(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def run_config_from_dict(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key {unknown[0]!r}")
    kwargs = {}
    if "model" in data:
        kwargs["model"] = model_config_from(data["model"], base_dir)
    for key, kind in (("corpus", CorpusConfig), ("train", TrainConfig), ("eval", EvalConfig)):
        if key in data:
            try:
                kwargs[key] = _strict(kind, data[key] or {}, key)
            except TypeError as exc:
                raise ConfigError(f"{key}: {exc}") from None
    for key in ("seed", "out"):
        if key in data:
            kwargs[key] = data[key]
    cfg = RunConfig(**kwargs)
    if not isinstance(cfg.seed, int):
        raise ConfigError(f"seed must be an integer, got {cfg.seed!r}")
    try:
        cfg.validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    return run_config_from_dict(_load_yaml(path), path.parent)
