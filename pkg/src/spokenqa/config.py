"""Run configuration: defaults, config files, and dotted-key overrides.

A RunConfig nests one section per pipeline stage. Values resolve in order
defaults < config file < command-line --set overrides, and the resolved
result is persisted next to the artifacts it produced, so a work directory
is always self-describing.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .distill import KDConfig
from .errors import ConfigError, ParameterError
from .model import QAModelConfig
from .noise import NoiseSpec, load_confusion_table


@dataclass(frozen=True)
class DataSection:
    num_stories: int = 120
    seed: int = 0              # corpus generation and split seed
    num_sentences: int = 6
    history_k: int = 2
    max_len: int = 384
    speech_vocab_size: int = 128
    speech_repeat: int = 1
    speech_seed: int = 0
    min_freq: int = 1
    fractions: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.num_stories < 1:
            raise ConfigError(f"data.num_stories must be >= 1, got {self.num_stories}")
        if self.history_k < 0:
            raise ConfigError(f"data.history_k must be >= 0, got {self.history_k}")
        if self.min_freq < 1:
            raise ConfigError(f"data.min_freq must be >= 1, got {self.min_freq}")
        object.__setattr__(self, "fractions", tuple(self.fractions))


@dataclass(frozen=True)
class NoiseSection:
    sub_rate: float = 0.15
    del_rate: float = 0.05
    ins_rate: float = 0.05
    seed: int = 0
    confusion_table: str | None = None  # optional JSON file of word confusions


@dataclass(frozen=True)
class ModelSection:
    d_model: int = 64
    num_heads: int = 4
    num_layers: int = 2
    num_joint_layers: int = 2
    d_ff: int = 128
    max_speech_len: int = 1024
    fusion: str = "cross_attention"
    dropout_rate: float = 0.1
    max_answer_len: int = 12
    seed: int = 0


@dataclass(frozen=True)
class TrainSection:
    steps: int = 400
    lr: float = 3e-4
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"train.steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if self.log_every < 1:
            raise ConfigError(f"train.log_every must be >= 1, got {self.log_every}")


@dataclass(frozen=True)
class KDSection:
    alpha: float = 0.9
    temperature: float = 2.0
    kl_direction: str = "student_first"
    hard_target: str = "student"


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = dataclasses.field(default_factory=DataSection)
    noise: NoiseSection = dataclasses.field(default_factory=NoiseSection)
    model: ModelSection = dataclasses.field(default_factory=ModelSection)
    train: TrainSection = dataclasses.field(default_factory=TrainSection)
    kd: KDSection = dataclasses.field(default_factory=KDSection)


_SECTIONS = {
    "data": DataSection,
    "noise": NoiseSection,
    "model": ModelSection,
    "train": TrainSection,
    "kd": KDSection,
}


def default_config() -> RunConfig:
    return RunConfig()


def _build_section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key {name!r}.{sorted(unknown)[0]!r}")
    try:
        return cls(**raw)
    except (ParameterError, TypeError) as err:
        raise ConfigError(f"bad value in config section {name!r}: {err}") from None


def config_from_dict(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section {sorted(unknown)[0]!r}")
    sections = {
        name: _build_section(name, cls, raw.get(name, {}))
        for name, cls in _SECTIONS.items()
    }
    return RunConfig(**sections)


def config_to_dict(config: RunConfig) -> dict:
    out = dataclasses.asdict(config)
    out["data"]["fractions"] = list(out["data"]["fractions"])
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from None
    return config_from_dict(raw)


def save_config(path, config: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare strings like cross_attention need no quotes


def apply_overrides(config: RunConfig, pairs) -> RunConfig:
    """Apply dotted-key overrides ('train.steps=800'); they win over the file."""
    raw = config_to_dict(config)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form section.key=value")
        key, value = pair.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {key!r} must look like section.key")
        section, name = parts
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        known = {f.name for f in dataclasses.fields(_SECTIONS[section])}
        if name not in known:
            raise ConfigError(f"unknown config key {section!r}.{name!r}")
        raw[section][name] = _parse_value(value.strip())
    return config_from_dict(raw)


# -- adapters into the pipeline's own config types ---------------------------


def noise_spec_from(config: RunConfig) -> NoiseSpec:
    table = None
    if config.noise.confusion_table is not None:
        table = load_confusion_table(config.noise.confusion_table)
    return NoiseSpec(sub_rate=config.noise.sub_rate, del_rate=config.noise.del_rate,
                     ins_rate=config.noise.ins_rate, confusion_table=table,
                     seed=config.noise.seed)


def model_config_from(config: RunConfig, vocab_size: int) -> QAModelConfig:
    m = config.model
    return QAModelConfig(
        vocab_size=vocab_size,
        speech_vocab_size=config.data.speech_vocab_size,
        d_model=m.d_model, num_heads=m.num_heads, num_layers=m.num_layers,
        num_joint_layers=m.num_joint_layers, d_ff=m.d_ff,
        max_len=config.data.max_len, max_speech_len=m.max_speech_len,
        fusion=m.fusion, dropout_rate=m.dropout_rate,
        max_answer_len=m.max_answer_len, seed=m.seed,
    )


def kd_config_from(config: RunConfig) -> KDConfig:
    return KDConfig(alpha=config.kd.alpha, temperature=config.kd.temperature,
                    kl_direction=config.kd.kl_direction,
                    hard_target=config.kd.hard_target)
