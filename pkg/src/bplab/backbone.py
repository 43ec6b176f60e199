"""Small multi-level feature-fusion network producing shared and prior maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

SHARED_CHANNELS = 32
PRIOR_CHANNELS = 4

_ACTIVATIONS = {
    "relu": nn.ReLU,
    "gelu": nn.GELU,
    "tanh": nn.Tanh,
    "softplus": nn.Softplus,
}


@dataclass
class BackboneConfig:
    stem_channels: int = 8
    levels: int = 4
    shared_channels: int = SHARED_CHANNELS
    output_stride: int = 4
    head_channels: int = 32
    activation: str = "relu"
    batch_norm: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.shared_channels != SHARED_CHANNELS:
            raise ValueError("shared_channels must be 32 so control-point features are 36-D")
        if self.output_stride not in (1, 2, 4):
            raise ValueError(f"output_stride must be 1, 2 or 4, got {self.output_stride}")
        if self.levels < 2:
            raise ValueError("need at least two pyramid levels")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class FeatureMaps(NamedTuple):
    shared: torch.Tensor  # (B, 32, h, w)
    prior: torch.Tensor  # (B, 4, h, w): text prob, distance, dir-x, dir-y


def _conv(cin, cout, k=3, stride=1, dilation=1, bn=True):
    pad = dilation * (k // 2)
    layers = [nn.Conv2d(cin, cout, k, stride=stride, padding=pad, dilation=dilation, bias=not bn)]
    if bn:
        layers.append(nn.BatchNorm2d(cout))
    return nn.Sequential(*layers)


class ResidualDown(nn.Module):
    """Two 3x3 convolutions with a strided 1x1 projection shortcut."""

    def __init__(self, cin, cout, act, bn):
        super().__init__()
        self.conv1 = _conv(cin, cout, stride=2, bn=bn)
        self.conv2 = _conv(cout, cout, bn=bn)
        self.skip = _conv(cin, cout, k=1, stride=2, bn=bn)
        self.act = act()

    def forward(self, x):
        y = self.act(self.conv1(x))
        return self.act(self.conv2(y) + self.skip(x))


class Backbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        act = _ACTIVATIONS[config.activation]
        bn = config.batch_norm
        widths = [config.stem_channels * 2**i for i in range(config.levels + 1)]
        self.stem = nn.Sequential(_conv(3, widths[0], bn=bn), act())
        self.stages = nn.ModuleList(ResidualDown(widths[i], widths[i + 1], act, bn) for i in range(config.levels))
        # Fuse every pyramid level at or coarser than the output stride.
        first = {1: 0, 2: 1, 4: 2}[config.output_stride]
        self.fused_levels = list(range(first, config.levels + 1))
        lateral = config.shared_channels // 2
        self.laterals = nn.ModuleList(nn.Conv2d(widths[i], lateral, 1) for i in self.fused_levels)
        self.fuse = nn.Sequential(
            _conv(lateral * len(self.fused_levels), config.shared_channels, k=1, bn=bn),
            act(),
            _conv(config.shared_channels, config.shared_channels, bn=bn),
            act(),
        )
        hc = config.head_channels
        self.prior_head = nn.Sequential(
            nn.Conv2d(config.shared_channels, hc, 3, padding=1, dilation=1),
            act(),
            nn.Conv2d(hc, hc, 3, padding=2, dilation=2),
            act(),
            nn.Conv2d(hc, PRIOR_CHANNELS, 1),
        )

    def forward(self, image: torch.Tensor) -> FeatureMaps:
        cfg = self.config
        _, _, h, w = image.shape
        mult = 2**cfg.levels
        ph, pw = (-h) % mult, (-w) % mult
        if ph or pw:
            image = F.pad(image, (0, pw, 0, ph))
        feats = [self.stem(image)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        target = feats[self.fused_levels[0]].shape[-2:]
        pyramid = []
        for lateral, lvl in zip(self.laterals, self.fused_levels):
            x = lateral(feats[lvl])
            if x.shape[-2:] != target:
                x = F.interpolate(x, size=target, mode="bilinear", align_corners=False)
            pyramid.append(x)
        shared = self.fuse(torch.cat(pyramid, dim=1))
        raw = self.prior_head(shared)
        prior = torch.cat([torch.sigmoid(raw[:, :1]), raw[:, 1:]], dim=1)
        s = cfg.output_stride
        oh, ow = -(-h // s), -(-w // s)
        return FeatureMaps(shared[..., :oh, :ow], prior[..., :oh, :ow])


def init_parameters(config: BackboneConfig, seed: int | None = None) -> Backbone:
    """Build a backbone whose initial parameters depend only on ``seed``."""
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(config.seed if seed is None else seed)
    try:
        model = Backbone(config)
    finally:
        torch.random.set_rng_state(gen_state)
    return model


def backbone_forward(image: torch.Tensor, model: Backbone) -> FeatureMaps:
    if image.dim() == 3:
        image = image.unsqueeze(0)
    return model(image)


def unit_direction(prior: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Prior maps with the direction channels rescaled to unit length (zero stays zero)."""
    d = prior[:, 2:4]
    norm = d.norm(dim=1, keepdim=True)
    d = torch.where(norm > eps, d / norm.clamp_min(eps), torch.zeros_like(d))
    return torch.cat([prior[:, :2], d], dim=1)
