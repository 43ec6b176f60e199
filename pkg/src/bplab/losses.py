"""Training objectives for the field head and the boundary transformer."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .transformer import bilinear_sample

CLS_EPS = 1e-7
# Negatives kept when an image has no positive pixel.
OHEM_FLOOR_POSITIVES = 64


@dataclass
class LossWeights:
    lam: float = 0.1
    alpha: float = 3.0
    beta: float = 0.5
    ohem_neg_pos_ratio: float = 3.0
    eps_epochs: int = 660
    invert_schedule: bool = False

    def __post_init__(self):
        for name in ("lam", "alpha", "beta", "ohem_neg_pos_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eps_epochs <= 0:
            raise ValueError("eps_epochs must be positive")


def loss_cls(pred: torch.Tensor, gt: torch.Tensor, ignore: torch.Tensor | None = None) -> torch.Tensor:
    """Mean binary cross-entropy over non-ignored pixels; ``pred`` holds probabilities."""
    p = pred.clamp(CLS_EPS, 1 - CLS_EPS)
    bce = -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p))
    if ignore is not None:
        keep = ~ignore.bool()
        if not keep.any():
            warnings.warn("loss_cls: every pixel is ignored")
            return pred.sum() * 0.0
        return bce[keep].mean()
    return bce.mean()


def loss_dist(
    pred: torch.Tensor,
    gt: torch.Tensor,
    gt_cls: torch.Tensor,
    ignore: torch.Tensor | None = None,
    neg_pos_ratio: float = 3.0,
) -> torch.Tensor:
    """Squared error over every positive pixel plus the hardest negatives (OHEM)."""
    err = (pred - gt) ** 2
    pos = gt_cls > 0.5
    neg = ~pos
    if ignore is not None:
        pos = pos & ~ignore.bool()
        neg = neg & ~ignore.bool()
    n_pos = int(pos.sum())
    k = int(neg_pos_ratio * (n_pos if n_pos > 0 else OHEM_FLOOR_POSITIVES))
    neg_err = err[neg]
    k = min(k, neg_err.numel())
    hard = torch.topk(neg_err, k).values if k > 0 else neg_err[:0]
    total = err[pos].sum() + hard.sum()
    count = n_pos + k
    return total / count if count else pred.sum() * 0.0


def instance_weights(labels: torch.Tensor, background_weight: float = 1.0) -> torch.Tensor:
    """Per-pixel 1/sqrt(instance size) on text, ``background_weight`` elsewhere."""
    lab = labels.long()
    flat = lab.reshape(lab.shape[0] if lab.dim() == 3 else 1, -1)
    w = torch.full(flat.shape, float(background_weight), dtype=torch.float64)
    for b in range(flat.shape[0]):
        ids, counts = torch.unique(flat[b], return_counts=True)
        lut = torch.zeros(int(ids.max()) + 1, dtype=torch.float64)
        lut[ids] = counts.double().rsqrt()
        text = flat[b] > 0
        w[b, text] = lut[flat[b][text]]
    return w.reshape(lab.shape)


def loss_dir(
    pred: torch.Tensor,
    gt: torch.Tensor,
    labels: torch.Tensor,
    ignore: torch.Tensor | None = None,
    background_weight: float = 1.0,
) -> torch.Tensor:
    """Weighted squared-L2 sum plus mean angular distance over text pixels.

    ``pred``/``gt`` are ``(2, H, W)`` or ``(B, 2, H, W)``; ``labels`` matches
    without the channel axis.  With a batch, the L2 sum is taken per image and
    averaged over images.
    """
    if pred.dim() == 3:
        pred, gt, labels = pred[None], gt[None], labels[None]
        ignore = ignore[None] if ignore is not None else None
    w = instance_weights(labels, background_weight).to(pred)
    keep = torch.ones_like(labels, dtype=torch.bool) if ignore is None else ~ignore.bool()
    sq = ((pred - gt) ** 2).sum(dim=1)
    l2 = (w * sq * keep).sum() / pred.shape[0]
    text = (labels > 0) & keep
    if not text.any():
        return l2
    p = pred.permute(0, 2, 3, 1)[text]
    g = gt.permute(0, 2, 3, 1)[text]
    pn = p.norm(dim=1)
    gn = g.norm(dim=1)
    valid = (pn > 0) & (gn > 0)
    cos = torch.zeros_like(pn)
    cos[valid] = (p[valid] * g[valid]).sum(dim=1) / (pn[valid] * gn[valid])
    return l2 + (1 - cos).mean()


def smooth_l1(x: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    a = x.abs()
    return torch.where(a < delta, 0.5 * a**2 / delta, a - 0.5 * delta)


def cyclic_shifts(points: torch.Tensor) -> torch.Tensor:
    """``(..., N, N, 2)``: entry ``[j, i]`` is point ``(i + j) % N``."""
    n = points.shape[-2]
    idx = (torch.arange(n)[:, None] + torch.arange(n)[None, :]) % n
    return points[..., idx, :]


def loss_match(pred: torch.Tensor, gt: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Minimum over cyclic shifts of the mean per-point smooth-L1 distance.

    Accepts ``(N, 2)`` pairs (scalar result) or batches ``(K, N, 2)`` (``(K,)`` result).
    """
    if pred.shape != gt.shape:
        raise ValueError(f"control point sets differ in shape: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    shifted = cyclic_shifts(gt)
    per_shift = smooth_l1(pred.unsqueeze(-3) - shifted, delta).sum(-1).mean(-1)
    return per_shift.min(dim=-1).values


def boundary_energy(points: torch.Tensor, dist: torch.Tensor) -> torch.Tensor:
    """Sum over control points of the bilinearly sampled distance field; ``(..., N, 2)`` -> ``(...)``."""
    return bilinear_sample(dist[None], points)[..., 0].sum(-1)


def loss_energy(energies: torch.Tensor, iteration: int) -> tuple[torch.Tensor, torch.Tensor]:
    """``(L_be, L_ie)`` for ``energies`` of shape ``(T, m + 1)`` where column 0 is the proposal."""
    cur = energies[:, iteration]
    prev = energies[:, iteration - 1]
    return cur.mean(), F.relu(cur - prev).mean()


@dataclass
class BTLoss:
    total: torch.Tensor
    match: torch.Tensor
    be: torch.Tensor
    ie: torch.Tensor


def loss_bt(
    polygons: list[torch.Tensor],
    gt_points: torch.Tensor,
    energies: torch.Tensor | None,
    use_energy: bool = True,
) -> BTLoss:
    """Average over iterations of matching plus boundary-energy losses.

    ``polygons[i]`` is ``(T, N, 2)`` after iteration ``i + 1``; ``energies`` is
    ``(T, m + 1)`` with the proposal energy first.
    """
    m = len(polygons)
    zero = gt_points.sum() * 0.0
    match = be = ie = zero
    for i, poly in enumerate(polygons, start=1):
        match = match + loss_match(poly, gt_points).mean()
        if use_energy and energies is not None:
            l_be, l_ie = loss_energy(energies, i)
            be = be + l_be
            ie = ie + l_ie
    match, be, ie = match / m, be / m, ie / m
    return BTLoss(match + be + ie, match, be, ie)


def polygon_energies(
    proposal: torch.Tensor, polygons: list[torch.Tensor], dist_maps: torch.Tensor, image_index: torch.Tensor, stride: int
) -> torch.Tensor:
    """``(T, m + 1)`` energies of proposals and refinements on per-image distance maps."""
    cols = []
    for poly in [proposal, *polygons]:
        e = torch.stack([boundary_energy(poly[t] / stride, dist_maps[int(image_index[t])]) for t in range(poly.shape[0])])
        cols.append(e)
    return torch.stack(cols, dim=1)


def schedule_coefficient(epoch: int, weights: LossWeights) -> float:
    eps = weights.eps_epochs
    z = (epoch - eps) / eps
    if weights.invert_schedule:
        z = -z
    return weights.lam / (1.0 + math.exp(z))


def loss_bp(l_cls: torch.Tensor, l_dist: torch.Tensor, l_dir: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return l_cls + weights.alpha * l_dist + weights.beta * l_dir


def total_loss(l_bp: torch.Tensor, l_bt: torch.Tensor, epoch: int, weights: LossWeights) -> torch.Tensor:
    return l_bp + schedule_coefficient(epoch, weights) * l_bt
