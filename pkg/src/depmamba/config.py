"""Model and training configuration, flat ``key=value`` config files."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    sample_rate: int = 8000
    normalize_input: bool = True
    # waveform encoder
    features: int = 64
    encoder_width: int = 16
    encoder_stride: int = 8
    # dual-path
    chunk_size: int = 244
    overlap: float = 0.5
    repeats: int = 1
    backend: str = "bimamba"
    # bi-mamba
    conv_width: int = 4
    state_size: int = 16
    residual: bool = True
    # external attention
    attention: bool = True
    softmax_placement: str = "time"
    attention_residual: bool = True
    # prediction head
    head_width: int = 3
    head_hidden: int = 32
    precision: str = "float64"
    seed: int = 0

    @property
    def expanded(self) -> int:
        return 2 * self.features

    def validate(self) -> "ModelConfig":
        for name in ("sample_rate", "features", "encoder_width", "encoder_stride",
                     "chunk_size", "repeats", "conv_width", "state_size",
                     "head_width", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.chunk_size % 2 or self.chunk_size < 2:
            raise ConfigError("chunk_size must be even and >= 2")
        if self.overlap != 0.5:
            raise ConfigError("only overlap=0.5 is supported")
        if self.softmax_placement not in ("time", "features"):
            raise ConfigError("softmax_placement must be 'time' or 'features'")
        if self.precision not in ("float64", "float32"):
            raise ConfigError("precision must be float64 or float32")
        if self.backend not in ("bimamba", "identity"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        return self

    def serialize(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.serialize().encode("utf-8")).digest()


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.002
    batch_size: int = 1
    epochs: int = 100
    train_seed: int = 0
    loss: str = "mse"
    patience: int = 0  # 0 disables early stopping on dev RMSE
    clip_norm: float = 5.0  # 0 disables clipping
    target_mae: float = 0.0  # stop once the epoch's train MAE drops below this; 0 disables
    eval_level: str = "recording"

    def validate(self) -> "TrainConfig":
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size != 1:
            raise ConfigError("only batch_size=1 is supported")
        if self.loss != "mse":
            raise ConfigError("only loss=mse is supported")
        if self.eval_level not in ("recording", "segment"):
            raise ConfigError("eval_level must be 'recording' or 'segment'")
        return self

    def serialize(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))


PRESETS = {
    "default": {},
    "tiny": {
        "features": 16,
        "state_size": 4,
        "chunk_size": 64,
        "encoder_width": 128,
        "encoder_stride": 64,
    },
}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(kind, key, raw: str):
    try:
        if kind is bool or kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _types(cls):
    return {f.name: f.type for f in fields(cls)}


def build(values: dict[str, str] | None = None, preset: str = "default"):
    """Build ``(ModelConfig, TrainConfig)`` from string overrides on a preset."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    model_types = _types(ModelConfig)
    train_types = _types(TrainConfig)
    model_kw = dict(PRESETS[preset])
    train_kw = {}
    for key, raw in (values or {}).items():
        if key in model_types:
            model_kw[key] = _coerce(model_types[key], key, raw)
        elif key in train_types:
            train_kw[key] = _coerce(train_types[key], key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ModelConfig(**model_kw).validate(), TrainConfig(**train_kw).validate()


def parse_text(text: str) -> tuple[str, dict[str, str]]:
    """Parse flat ``key=value`` lines; ``preset=<name>`` selects the base preset."""
    values = {}
    preset = "default"
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "preset":
            preset = raw
        else:
            values[key] = raw
    return preset, values


def load(source: str | Path | None):
    """Load a config file, or a preset name, or defaults when ``source`` is None."""
    if source is None:
        return build()
    source = str(source)
    if source in PRESETS and not Path(source).exists():
        return build(preset=source)
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"config file not found: {source}")
    preset, values = parse_text(path.read_text(encoding="utf-8"))
    return build(values, preset)


def with_overrides(cfg: ModelConfig, **kw) -> ModelConfig:
    return replace(cfg, **kw).validate()
