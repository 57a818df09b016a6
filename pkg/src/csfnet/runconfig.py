"""``key = value`` run configuration files.

Keys mirror :class:`ModelConfig`, :class:`TrainConfig`, the augmentation
policy and a few dataset settings. Unknown keys are an error, and relative
paths are resolved against the directory of the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .data import AugmentPolicy
from .network import ModelConfig
from .trainer import TrainConfig

MODEL_KEYS = {
    "variant": str, "num_classes": int, "x_channels": int, "dual_branch_stages": int,
    "decoder_fusion": str, "pooling": str, "width": int, "height": int,
    "csafm_hidden_ratio": float, "full_x_backbone": bool,
}
TRAIN_KEYS = {
    "base_lr": float, "momentum": float, "weight_decay": float, "power": float,
    "max_iters": int, "batch_size": int, "seed": int,
}
AUGMENT_KEYS = {
    "hflip_p": float, "scale_min": float, "scale_max": float,
    "crop_width": int, "crop_height": int, "jitter": float,
}
DATA_KEYS = {"modality": str, "data_dir": Path, "palette": Path, "synthetic_samples": int}
ALL_KEYS = {**MODEL_KEYS, **TRAIN_KEYS, **AUGMENT_KEYS, **DATA_KEYS}

# small RGB-D setup that trains on the synthetic scenes in minutes
TOY = {
    "num_classes": 4, "x_channels": 2, "width": 128, "height": 128,
    "max_iters": 200, "batch_size": 4, "base_lr": 0.01, "synthetic_samples": 20,
}


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, text: str, base: Path):
    kind = ALL_KEYS[key]
    if kind is bool:
        return _parse_bool(text)
    if kind is Path:
        p = Path(text).expanduser()
        return p if p.is_absolute() else base / p
    return kind(text)


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None

    @classmethod
    def parse(cls, text: str, source: str = "<config>", base: Union[str, os.PathLike] = ".") -> "RunConfig":
        values: dict[str, Any] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in ALL_KEYS:
                raise ConfigError(f"{source}:{n}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
            try:
                values[key] = _convert(key, value, Path(base))
            except ValueError as e:
                raise ConfigError(f"{source}:{n}: bad value for {key}: {e}") from e
        cfg = cls(values, source)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"{p}: cannot read config ({e.strerror})") from e
        return cls.parse(text, str(p), p.parent)

    @classmethod
    def toy(cls) -> "RunConfig":
        return cls(dict(TOY), "<toy>")

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def validate(self) -> None:
        """Build every derived config once so bad values fail before any work."""
        try:
            self.model()
            self.train()
        except ValueError as e:
            raise ConfigError(f"{self.source}: {e}") from e
        for key in ("data_dir", "palette"):
            p = self.values.get(key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{self.source}: {key} {p} does not exist")
        modality = self.values.get("modality")
        if modality is not None and modality not in ("depth", "thermal", "aolp"):
            raise ConfigError(f"{self.source}: modality must be depth, thermal or aolp, got {modality!r}")

    def model(self, **override) -> ModelConfig:
        kw = {k: v for k, v in self.values.items() if k in MODEL_KEYS}
        kw.update(override)
        return ModelConfig(**kw)

    def policy(self) -> AugmentPolicy:
        d = AugmentPolicy()
        v = self.values
        m = self.model()
        crop = (v.get("crop_width", m.width), v.get("crop_height", m.height))
        return AugmentPolicy(
            hflip_p=v.get("hflip_p", d.hflip_p),
            scale_range=(v.get("scale_min", d.scale_range[0]), v.get("scale_max", d.scale_range[1])),
            crop=crop,
            jitter=v.get("jitter", d.jitter),
        )

    def train(self, **override) -> TrainConfig:
        kw = {k: v for k, v in self.values.items() if k in TRAIN_KEYS}
        kw.update(override)
        return TrainConfig(policy=self.policy(), **kw)

    @property
    def modality(self) -> str:
        if "modality" in self.values:
            return self.values["modality"]
        return "depth" if self.model().x_channels == 2 else "thermal"


def dump(values: dict[str, Any]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())


__all__ = ["ALL_KEYS", "ConfigError", "RunConfig", "TOY", "dump"]
