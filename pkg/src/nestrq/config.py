"""Run configuration file: one JSON document with optional sections.

Sections: ``corpus``, ``features``, ``quantizer``, ``encoder``,
``objective``, ``training``, ``probe``. Every field has a default; unknown
sections or keys are rejected before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import CausalitySpec, EncoderConfig
from .errors import ConfigError
from .features import FbankConfig, SyntheticCorpusConfig
from .objectives import MaskConfig
from .serialization import digest
from .training import TrainConfig

SEED_ENV = "NESTRQ_SEED"


@dataclass(frozen=True)
class QuantizerSection:
    seed: int = 0
    stack: int = 4
    dim: int = 16
    V: int = 1024
    min_standardizer_rows: int = 1000


@dataclass(frozen=True)
class ObjectiveSection:
    name: str = "nestrq"
    num_future: int = 5
    mask: MaskConfig = field(default_factory=MaskConfig)


@dataclass(frozen=True)
class TrainingSection:
    steps: int = 2000
    batch_utterances: int = 8
    crop_frames: int = 192
    peak_lr: float = 3e-4
    warmup_steps: int = 200
    scheduler: str = "transformer"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0
    record_wall_time: bool = False


@dataclass(frozen=True)
class ProbeSection:
    split: float = 0.8
    epochs: int = 300
    lr: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    corpus: SyntheticCorpusConfig = field(default_factory=SyntheticCorpusConfig)
    features: FbankConfig = field(default_factory=FbankConfig)
    quantizer: QuantizerSection = field(default_factory=QuantizerSection)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    objective: ObjectiveSection = field(default_factory=ObjectiveSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    probe: ProbeSection = field(default_factory=ProbeSection)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return digest(self.to_json())

    def train_config(self) -> TrainConfig:
        t = dataclasses.asdict(self.training)
        return TrainConfig(objective=self.objective.name, num_future=self.objective.num_future,
                           mask=self.objective.mask, **t)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        f = names[key]
        sub = {
            "mask": MaskConfig, "causality": CausalitySpec,
        }.get(key)
        if sub is not None and isinstance(value, dict):
            value = _build(sub, value, f"{where}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as err:
        raise ConfigError(f"{where}: {err}") from None
    except TypeError as err:
        raise ConfigError(f"{where}: {err}") from None


_SECTIONS = {
    "corpus": SyntheticCorpusConfig,
    "features": FbankConfig,
    "quantizer": QuantizerSection,
    "encoder": EncoderConfig,
    "objective": ObjectiveSection,
    "training": TrainingSection,
    "probe": ProbeSection,
}


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config section(s) {', '.join(unknown)}")
    sections = {name: _build(cls, data.get(name, {}), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**sections)
    if cfg.objective.name not in ("nestrq", "bestrq"):
        raise ConfigError(f"objective.name must be nestrq or bestrq, got {cfg.objective.name!r}")
    if cfg.features.num_mels != cfg.encoder.num_mels:
        raise ConfigError("features.num_mels and encoder.num_mels differ")
    if cfg.features.sample_rate_hz != cfg.corpus.sample_rate_hz:
        raise ConfigError("features.sample_rate_hz and corpus.sample_rate_hz differ")
    cfg.train_config()  # validates the merged training settings
    return cfg


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return parse_config(data)


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    """Copy of ``cfg`` with ``section`` fields replaced (``None`` values ignored)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    try:
        new_section = dataclasses.replace(getattr(cfg, section), **values)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{section}: {err}") from None
    return dataclasses.replace(cfg, **{section: new_section})


def env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None


def resolve_seed(flag: int | None, config_file_has_seed: bool, configured: int) -> int:
    """--seed flag, else the config file's value, else NESTRQ_SEED, else the default."""
    if flag is not None:
        return flag
    if config_file_has_seed:
        return configured
    env = env_seed()
    return configured if env is None else env
