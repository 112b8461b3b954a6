"""Run configuration: defaults, key-path text files, and validation.

The on-disk format is one ``section.key = value`` assignment per line with
``#`` comments. Every field has a default; the defaults reproduce the
reference training constants (1000 timesteps, learning rate 1e-4, batch 2,
EMA rate 0.995, architecture CCKKK). A copy of the effective configuration
is written into every run directory for provenance.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

__all__ = ["RunConfig", "ModelConfig", "ScheduleConfig", "TrainConfig",
           "DataConfig", "SampleConfig", "AblateConfig"]


@dataclass
class ModelConfig:
    arch: str = "CCKKK"
    base_channels: int = 16
    embed_dim: int = 128
    attention_heads: int = 1
    kan_depth: int = 1
    spline_grid_size: int = 5
    spline_order: int = 3
    spline_range_min: float = -1.0
    spline_range_max: float = 1.0
    encoder_base_channels: int = 16
    encoder_stages: int = 2


@dataclass
class ScheduleConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class TrainConfig:
    target_mode: str = "epsilon"   # or "residual"
    loss_norm: str = "squared"     # or "l2"
    learning_rate: float = 1e-4
    batch_size: int = 2
    steps: int = 2000
    ema_rate: float = 0.995
    condition_dropout: float = 0.0


@dataclass
class DataConfig:
    source: str = "phantom"        # "phantom" or "dir"
    dir: str = ""
    phantom_count: int = 8
    height: int = 64
    width: int = 64
    phantom_seed: int = 100
    val_subjects: int = 0


@dataclass
class SampleConfig:
    resample_jumps: int = 1
    noise_free_replacement: bool = False
    clip_denoised: bool = True     # clamp implied x0 to [0,1] inside each step
    mask: str = "healthy"          # which mask marks the inpaint region


@dataclass
class AblateConfig:
    archs: str = "CCCCK,CCCKK,CCKKK,CKKKK"


_SECTIONS = {
    "model": ModelConfig,
    "schedule": ScheduleConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "sample": SampleConfig,
    "ablate": AblateConfig,
}


def _parse_scalar(text: str, kind: type):
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r} as {kind.__name__}") from exc


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    seed: int = 0
    out_dir: str = "runs"
    explicit_keys: frozenset = field(default_factory=frozenset, repr=False)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            cfg.set_key(key, value)
            seen.add(key)
        cfg.explicit_keys = frozenset(seen)
        return cfg

    def set_key(self, key: str, value: str) -> None:
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            target = getattr(self, section)
            spec = {f.name: f.type for f in fields(target)}
            if name not in spec:
                raise ConfigError(f"unknown config key {key!r}")
            kind = type(getattr(target, name))
            setattr(target, name, _parse_scalar(value, kind))
        elif key == "seed":
            self.seed = _parse_scalar(value, int)
        elif key == "out_dir":
            self.out_dir = value.strip()
        else:
            raise ConfigError(f"unknown config key {key!r}")

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}", f"out_dir = {self.out_dir}"]
        for section, _ in _SECTIONS.items():
            target = getattr(self, section)
            for f in fields(target):
                lines.append(f"{section}.{f.name} = {getattr(target, f.name)}")
        return "\n".join(lines) + "\n"

    def copy(self) -> "RunConfig":
        clone = RunConfig.from_text(self.to_text())
        clone.explicit_keys = self.explicit_keys
        return clone

    def validate(self) -> None:
        from .diffusion import LOSS_NORMS, TARGET_MODES
        from .ukan import parse_arch
        parse_arch(self.model.arch)
        if self.model.base_channels < 1:
            raise ConfigError("model.base_channels must be >= 1")
        if self.model.embed_dim % 2:
            raise ConfigError("model.embed_dim must be even")
        if self.schedule.timesteps < 1:
            raise ConfigError("schedule.timesteps must be >= 1")
        if not 0.0 < self.schedule.beta_start <= self.schedule.beta_end < 1.0:
            raise ConfigError("schedule betas must satisfy 0 < start <= end < 1")
        if self.train.target_mode not in TARGET_MODES:
            raise ConfigError(
                f"train.target_mode must be one of {TARGET_MODES}")
        if self.train.loss_norm not in LOSS_NORMS:
            raise ConfigError(f"train.loss_norm must be one of {LOSS_NORMS}")
        if self.train.batch_size < 1 or self.train.steps < 1:
            raise ConfigError("train.batch_size and train.steps must be >= 1")
        if not 0.0 < self.train.ema_rate < 1.0:
            raise ConfigError("train.ema_rate must lie in (0, 1)")
        if not 0.0 <= self.train.condition_dropout < 1.0:
            raise ConfigError("train.condition_dropout must lie in [0, 1)")
        if self.data.source not in ("phantom", "dir"):
            raise ConfigError("data.source must be 'phantom' or 'dir'")
        if self.sample.mask not in ("healthy", "tumor"):
            raise ConfigError("sample.mask must be 'healthy' or 'tumor'")
        if self.sample.resample_jumps < 1:
            raise ConfigError("sample.resample_jumps must be >= 1")
        for arch in self.ablate_archs():
            parse_arch(arch)

    def ablate_archs(self) -> list[str]:
        return [a.strip() for a in self.ablate.archs.split(",") if a.strip()]

    def model_keys_match(self, other: "RunConfig") -> bool:
        """True when model and schedule sections agree (checkpoint compatibility)."""
        return dataclasses.asdict(self.model) == dataclasses.asdict(other.model) \
            and dataclasses.asdict(self.schedule) == dataclasses.asdict(other.schedule)
