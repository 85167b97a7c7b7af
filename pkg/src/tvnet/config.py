"""Training configuration and the flat ``key = value`` file format shared by all commands."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from .backbone import BackboneSpec
from .model import ModelConfig


class ConfigError(ValueError):
    """Bad key, bad value or unreadable config file."""


@dataclass
class TrainConfig:
    data_root: str = ""
    train_split: str = "train"
    eval_split: str = "test"
    input_size: int = 352
    batch_size: int = 20
    epochs: int = 50
    max_iters: int = 0  # 0 = no cap
    optimizer: str = "sgd"
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    adam_beta2: float = 0.999
    grad_clip: float = 0.5  # 0 disables clipping
    lr_step: int = 0  # epochs between decays, 0 = constant
    lr_gamma: float = 0.1
    seed: int = 0
    deterministic: bool = True
    flip: bool = True
    backbone: str = "toy"
    backbone_weights: str = ""
    channels: int = 32
    cascades: int = 2
    use_hrf: bool = True
    use_fba: bool = True
    edge_weight: float = 1.0
    level_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)  # P6, P5, P4, P3
    exclude_background: bool = True

    def validate(self) -> "TrainConfig":
        checks = [
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr >= 0, "lr must be >= 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.max_iters >= 0, "max_iters must be >= 0"),
            (self.optimizer in ("sgd", "adam"), f"optimizer must be sgd or adam, got {self.optimizer!r}"),
            (self.input_size >= 64 and self.input_size % 32 == 0, "input_size must be >= 64 and divisible by 32"),
            (1 <= self.cascades <= 4, "cascades must be in 1..4"),
            (len(self.level_weights) == 4, "level_weights needs four values (P6, P5, P4, P3)"),
            (self.backbone in ("toy", "res2net50"), f"unknown backbone {self.backbone!r}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def model_config(self) -> ModelConfig:
        spec = BackboneSpec(kind=self.backbone, weights=self.backbone_weights or None)
        return ModelConfig(
            backbone=spec,
            channels=self.channels,
            cascades=self.cascades,
            use_hrf=self.use_hrf,
            use_fba=self.use_fba,
        )

    def level_weight_map(self) -> dict[int, float]:
        return dict(zip((6, 5, 4, 3), self.level_weights))


# --- flat key = value files ------------------------------------------------


def _parse_value(kind, text: str, key: str):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if typing.get_origin(kind) is tuple:
            return tuple(float(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def build(cls, values: dict[str, str]):
    """Instantiate dataclass ``cls`` from string values, rejecting unknown keys."""
    types = field_types(cls)
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kwargs = {k: _parse_value(types[k], v, k) for k, v in values.items()}
    return cls(**kwargs)


def load(cls, path=None, overrides: dict[str, str] | None = None):
    """File values first, then ``overrides`` on top."""
    values = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        values.update(parse_flat(text, str(path)))
    values.update(overrides or {})
    return build(cls, values)


def dump(obj) -> str:
    lines = [f"{f.name} = {_format_value(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]
    return "\n".join(lines) + "\n"
