"""Control-point feature sampling and the iterative boundary transformer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .backbone import PRIOR_CHANNELS, SHARED_CHANNELS, FeatureMaps, unit_direction

FEATURE_DIM = SHARED_CHANNELS + PRIOR_CHANNELS


@dataclass
class TransformerConfig:
    in_dim: int = FEATURE_DIM
    encoder_layers: int = 3
    embed_dim: int = 128
    heads: int = 4
    mlp_hidden: int = 256
    decoder_hidden: tuple[int, int] = (128, 64)
    max_offset: float = 16.0
    iterations: int = 3
    # Route the raw 36-D input (True) or the projected embedding (False) through the decoder skip.
    skip_from_raw: bool = True

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.max_offset <= 0:
            raise ValueError("max_offset must be positive")
        self.decoder_hidden = tuple(self.decoder_hidden)


def bilinear_sample(grid: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Sample a ``(C, h, w)`` grid at ``(..., 2)`` points given as ``(x, y)``.

    Returns ``(..., C)``.  Coordinates outside the grid are clamped to the border.
    """
    c, h, w = grid.shape
    lead = points.shape[:-1]
    pts = points.reshape(-1, 2)
    x = pts[:, 0].clamp(0, w - 1)
    y = pts[:, 1].clamp(0, h - 1)
    # NaN coordinates index cell 0 and stay NaN through the weights
    x0 = x.detach().nan_to_num(0.0).floor().clamp(max=max(w - 2, 0))
    y0 = y.detach().nan_to_num(0.0).floor().clamp(max=max(h - 2, 0))
    fx = x - x0
    fy = y - y0
    ix0 = x0.long()
    iy0 = y0.long()
    ix1 = (ix0 + 1).clamp(max=w - 1)
    iy1 = (iy0 + 1).clamp(max=h - 1)
    flat = grid.reshape(c, -1)
    v00 = flat[:, iy0 * w + ix0]
    v01 = flat[:, iy0 * w + ix1]
    v10 = flat[:, iy1 * w + ix0]
    v11 = flat[:, iy1 * w + ix1]
    out = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)
    return out.transpose(0, 1).reshape(*lead, c)


def build_features(
    points: torch.Tensor, maps: FeatureMaps, stride: int, batch_index: int = 0, prior_mask: torch.Tensor | None = None
) -> torch.Tensor:
    """``(..., N, 36)`` control-point features for image-space ``points``.

    ``prior_mask`` (4 values) zeroes prior channels for ablations.
    """
    prior = unit_direction(maps.prior[batch_index : batch_index + 1])[0]
    if prior_mask is not None:
        prior = prior * prior_mask.to(prior).view(-1, 1, 1)
    grid = torch.cat([maps.shared[batch_index], prior], dim=0)
    return bilinear_sample(grid, points / stride)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, return_attention=False):
        b, n, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(hd), dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, n, d)
        y = self.out(y)
        return (y, attn) if return_attention else y


class TransBlock(nn.Module):
    """Pre-norm self-attention followed by a pre-norm MLP.

    The block returns only its update; the encoder layer adds the input back.
    """

    def __init__(self, dim, heads, hidden):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x, return_attention=False):
        a, attn = self.attn(self.norm1(x), return_attention=True)
        y = a + self.mlp(self.norm2(a))
        return (y, attn) if return_attention else y


class BoundaryTransformer(nn.Module):
    def __init__(self, config: TransformerConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.input_proj = nn.Linear(config.in_dim, d)
        self.blocks = nn.ModuleList(TransBlock(d, config.heads, config.mlp_hidden) for _ in range(config.encoder_layers))
        self.skip_proj = nn.Linear(config.in_dim if config.skip_from_raw else d, d)
        h1, h2 = config.decoder_hidden
        self.decoder = nn.Sequential(
            nn.Linear(2 * d, h1), nn.ReLU(), nn.Linear(h1, h2), nn.ReLU(), nn.Linear(h2, 2)
        )

    def encode(self, x, return_attention=False):
        h = self.input_proj(x)
        maps = []
        for block in self.blocks:
            upd, attn = block(h, return_attention=True)
            h = h + upd
            maps.append(attn)
        return (h, maps) if return_attention else h

    def decode(self, x, encoded):
        skip = self.skip_proj(x if self.config.skip_from_raw else self.input_proj(x))
        return self.decoder(torch.cat([skip, encoded], dim=-1))

    def forward(self, x):
        """Raw per-vertex offsets ``(B, N, 2)`` for features ``(B, N, in_dim)``."""
        return self.decode(x, self.encode(x))


def encoder_forward(x: torch.Tensor, model: BoundaryTransformer, return_attention: bool = False):
    return model.encode(x, return_attention=return_attention)


def decoder_forward(x: torch.Tensor, encoded: torch.Tensor, model: BoundaryTransformer) -> torch.Tensor:
    return model.decode(x, encoded)


def clamp_offsets(offsets: torch.Tensor, max_offset: float = 16.0) -> torch.Tensor:
    """Rescale every row whose Euclidean norm exceeds ``max_offset`` onto that radius."""
    norm = offsets.norm(dim=-1, keepdim=True)
    return offsets * (max_offset / norm.clamp_min(max_offset))


def refine_iteratively(
    points: torch.Tensor,
    maps: FeatureMaps,
    model: BoundaryTransformer,
    iterations: int,
    image_size: tuple[int, int],
    stride: int,
    batch_index: int = 0,
    prior_mask: torch.Tensor | None = None,
    detach_between: bool = True,
) -> list[torch.Tensor]:
    """Deform ``(K, N, 2)`` proposals ``iterations`` times; returns every intermediate polygon.

    Features are re-sampled from the same ``maps`` at each step and points stay
    inside the image rectangle.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    h, w = image_size
    lo = points.new_zeros(2)
    hi = points.new_tensor([w - 1, h - 1])
    out = []
    current = points
    for _ in range(iterations):
        feats = build_features(current, maps, stride, batch_index, prior_mask)
        offsets = clamp_offsets(model(feats), model.config.max_offset)
        current = torch.maximum(torch.minimum(current + offsets, hi), lo)
        out.append(current)
        if detach_between:
            current = current.detach()
    return out


def init_transformer(config: TransformerConfig, seed: int = 0) -> BoundaryTransformer:
    state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = BoundaryTransformer(config)
    finally:
        torch.random.set_rng_state(state)
    return model


def zero_offset_(model: BoundaryTransformer) -> BoundaryTransformer:
    """Zero the last decoder layer so the model predicts no motion."""
    last = model.decoder[-1]
    nn.init.zeros_(last.weight)
    nn.init.zeros_(last.bias)
    return model

