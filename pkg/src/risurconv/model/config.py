"""Classifier and training configuration, JSON round-tripping and config hashes."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..risp import VARIANTS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One RISurConv layer: reference points, neighbours and output channels.

    ``neighbors=None`` means "every other point of the previous layer", used by
    the global layer.
    """

    points: int
    neighbors: int | None
    channels: int


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class ClassifierConfig:
    layer_specs: tuple = ()
    encoder_heads: int = 8
    fc_widths: tuple = (256, 128)
    num_classes: int = 40
    risp_variant: str = "standard-14"
    sa_flags: dict = field(default_factory=lambda: {"sa1": True, "sa2": True, "encoder": True})
    surfaces: int = 2
    embed_channels: tuple | None = None
    normal_k: int = 16
    reestimate_normals: bool = False
    sa_bias: bool = False
    sa_residual: bool = False

    def __post_init__(self):
        specs = tuple(s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in self.layer_specs)
        object.__setattr__(self, "layer_specs", specs)
        object.__setattr__(self, "fc_widths", tuple(self.fc_widths))
        if self.embed_channels is not None:
            object.__setattr__(self, "embed_channels", tuple(self.embed_channels))
        flags = {"sa1": True, "sa2": True, "encoder": True}
        unknown = set(self.sa_flags) - set(flags)
        if unknown:
            raise ConfigError(f"unknown sa_flags: {sorted(unknown)}")
        flags.update(self.sa_flags)
        object.__setattr__(self, "sa_flags", flags)
        self.validate()

    def validate(self) -> None:
        specs = self.layer_specs
        if not specs:
            raise ConfigError("at least one layer is required")
        pts = [s.points for s in specs]
        if any(b >= a for a, b in zip(pts, pts[1:])):
            raise ConfigError(f"layer point counts must strictly decrease, got {pts}")
        ch = [s.channels for s in specs]
        if any(b <= a for a, b in zip(ch, ch[1:])):
            raise ConfigError(f"layer channels must strictly increase, got {ch}")
        for s in specs:
            if s.neighbors is not None and s.neighbors < 3:
                raise ConfigError("each layer needs at least 3 neighbours")
        if self.embed_channels is not None and len(self.embed_channels) != len(specs):
            raise ConfigError("embed_channels must list one width per layer")
        if self.risp_variant not in VARIANTS:
            raise ConfigError(f"risp_variant must be one of {VARIANTS}")
        if self.surfaces not in (1, 2, 3, 4):
            raise ConfigError("surfaces must be 1, 2, 3 or 4")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.sa_flags["encoder"] and ch[-1] % self.encoder_heads:
            raise ConfigError(f"encoder width {ch[-1]} is not divisible by {self.encoder_heads} heads")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layer_specs"] = [[s.points, s.neighbors, s.channels] for s in self.layer_specs]
        d["fc_widths"] = list(self.fc_widths)
        if self.embed_channels is not None:
            d["embed_channels"] = list(self.embed_channels)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ClassifierConfig":
        return _from_dict(cls, data)

    def replace(self, **changes) -> "ClassifierConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 16
    rotation_mode_train: str = "z"
    rotation_mode_test: str = "so3"
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (batch norm)")
        for mode in (self.rotation_mode_train, self.rotation_mode_test):
            if mode not in ("none", "z", "so3"):
                raise ConfigError(f"rotation mode must be none, z or so3, got {mode!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _from_dict(cls, data)


def config_hash(*configs) -> str:
    blob = json.dumps([c.to_dict() for c in configs], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def load_config(path, cls):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return cls.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def paper_preset(num_classes: int = 40, **overrides) -> ClassifierConfig:
    """Five layers 1024/512/256/128/1 points, 32..512 channels, FC 256-128."""
    specs = [(1024, 8, 32), (512, 8, 64), (256, 8, 128), (128, 8, 256), (1, None, 512)]
    return ClassifierConfig(layer_specs=specs, fc_widths=(256, 128), num_classes=num_classes, **overrides)


def toy_preset(num_classes: int = 5, **overrides) -> ClassifierConfig:
    """Full-size layout with every point count and width divided by four."""
    specs = [(256, 8, 8), (128, 8, 16), (64, 8, 32), (32, 8, 64), (1, None, 128)]
    return ClassifierConfig(layer_specs=specs, fc_widths=(64, 32), num_classes=num_classes, **overrides)
