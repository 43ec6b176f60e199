"""Plain-text ``key = value`` configuration files."""

from __future__ import annotations

import dataclasses
import re
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import BackboneConfig
from .losses import LossWeights
from .proposals import Thresholds
from .transformer import TransformerConfig


class ConfigError(ValueError):
    pass


PRIOR_NAMES = ("cls", "dist", "dir")

# Where each default comes from: "published" values are the reference
# settings of the method, "desk" values are scaled down for CPU-size runs,
# "chosen" values fill gaps the method leaves open.
PROVENANCE = {
    "lr": "published",
    "lr_decay": "published",
    "lr_decay_every": "published",
    "n_control_points": "published",
    "iterations": "published",
    "th_d": "published",
    "th_s": "published",
    "lam": "published",
    "alpha": "published",
    "beta": "published",
    "ohem_ratio": "published",
    "max_offset": "published",
    "encoder_layers": "published",
    "embed_dim": "published",
    "shared_channels": "published",
    "crop": "desk",
    "epochs": "desk",
    "batch_size": "desk",
    "output_stride": "desk",
    "stem_channels": "desk",
    "levels": "desk",
}


@dataclass
class RunConfig:
    # data
    crop: int = 256
    augment: bool = True
    min_crop: float = 0.6
    # backbone
    stem_channels: int = 8
    levels: int = 4
    shared_channels: int = 32
    output_stride: int = 4
    head_channels: int = 32
    activation: str = "relu"
    # boundary transformer
    encoder_layers: int = 3
    embed_dim: int = 128
    heads: int = 4
    mlp_hidden: int = 256
    max_offset: float = 16.0
    skip_from_raw: bool = True
    n_control_points: int = 20
    iterations: int = 3
    prior_channels: tuple[str, ...] = PRIOR_NAMES
    # proposals
    th_d: float = 0.3
    th_s: float = 0.85
    max_proposals: int = 16
    # losses
    lam: float = 0.1
    alpha: float = 3.0
    beta: float = 0.5
    ohem_ratio: float = 3.0
    use_energy_loss: bool = True
    invert_schedule: bool = False
    dir_background_weight: float = 1.0
    # optimisation
    lr: float = 0.001
    lr_decay: float = 0.9
    lr_decay_every: int = 50
    epochs: int = 120
    batch_size: int = 8
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.prior_channels, str):
            self.prior_channels = tuple(p.strip() for p in self.prior_channels.split(",") if p.strip())
        self.prior_channels = tuple(self.prior_channels)
        unknown = set(self.prior_channels) - set(PRIOR_NAMES)
        if unknown:
            raise ConfigError(f"unknown prior channels: {sorted(unknown)}")
        if self.n_control_points < 3:
            raise ConfigError("n_control_points must be at least 3")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            stem_channels=self.stem_channels,
            levels=self.levels,
            shared_channels=self.shared_channels,
            output_stride=self.output_stride,
            head_channels=self.head_channels,
            activation=self.activation,
            seed=self.seed,
        )

    def transformer(self) -> TransformerConfig:
        return TransformerConfig(
            encoder_layers=self.encoder_layers,
            embed_dim=self.embed_dim,
            heads=self.heads,
            mlp_hidden=self.mlp_hidden,
            max_offset=self.max_offset,
            iterations=self.iterations,
            skip_from_raw=self.skip_from_raw,
        )

    def thresholds(self) -> Thresholds:
        return Thresholds(self.th_d, self.th_s)

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lam=self.lam,
            alpha=self.alpha,
            beta=self.beta,
            ohem_neg_pos_ratio=self.ohem_ratio,
            eps_epochs=self.epochs,
            invert_schedule=self.invert_schedule,
        )

    def prior_mask(self) -> list[float]:
        """Four channel multipliers (cls, dist, dir-x, dir-y)."""
        return [
            float("cls" in self.prior_channels),
            float("dist" in self.prior_channels),
            float("dir" in self.prior_channels),
            float("dir" in self.prior_channels),
        ]


def parse_key_values(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce(value: str, tp):
    origin = typing.get_origin(tp)
    if origin is tuple:
        inner = typing.get_args(tp)[0]
        parts = value.split(",") if inner is str else re.split(r"[,x]", value)
        return tuple(_coerce(p.strip(), inner) for p in parts if p.strip())
    if tp is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if tp is int:
        return int(value)
    if tp is float:
        return float(value)
    return value


def from_key_values(cls, values: dict[str, str]):
    """Build dataclass ``cls`` from string values; unknown keys are errors."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    kwargs = {}
    for key, raw in values.items():
        try:
            kwargs[key] = _coerce(raw, hints[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(cls, path: str | Path | None):
    if path is None:
        return cls()
    return from_key_values(cls, parse_key_values(Path(path).read_text(encoding="utf-8")))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def dump_config(cfg) -> str:
    """Every effective setting, one per line, tagged with where its default comes from."""
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        tag = PROVENANCE.get(f.name, "chosen")
        default = f.default if f.default is not dataclasses.MISSING else None
        note = tag if value == default else f"{tag}; overridden"
        lines.append(f"{f.name} = {_fmt(value)}  # {note}")
    return "\n".join(lines) + "\n"
