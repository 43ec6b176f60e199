import numpy as np
import pytest
import torch

from bplab.fields import PolygonAnnotation, normalize_polygon

D = torch.float64


def random_star(rng, cx, cy, r_lo, r_hi, k=None):
    """Star-shaped (hence simple) polygon around (cx, cy), CCW in pixel coordinates."""
    k = k or int(rng.integers(5, 12))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radii = rng.uniform(r_lo, r_hi, size=k)
    pts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
    return normalize_polygon(pts)


def random_scene(rng, size=64, count=None):
    """Non-overlapping star polygons on a ``size`` x ``size`` grid."""
    count = count if count is not None else int(rng.integers(1, 4))
    anns = []
    cells = size // 2
    slots = rng.permutation(4)[:count]
    for s in slots:
        cx = (s % 2) * cells + cells / 2
        cy = (s // 2) * cells + cells / 2
        anns.append(PolygonAnnotation(random_star(rng, cx, cy, 3, cells / 2 - 2)))
    return anns


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_check(fn, x, rel=1e-4, eps=1e-6, n_coords=None, rng=None):
    """Compare autograd with central differences on (a subset of) the coordinates of ``x``."""
    x = x.clone().detach().to(D).requires_grad_(True)
    fn(x).backward()
    grad = x.grad.detach().reshape(-1)
    flat = x.detach().reshape(-1)
    idx = range(flat.numel())
    if n_coords is not None and rng is not None:
        idx = rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False)
    for i in idx:
        plus, minus = flat.clone(), flat.clone()
        plus[i] += eps
        minus[i] -= eps
        num = (fn(plus.reshape(x.shape)) - fn(minus.reshape(x.shape))).item() / (2 * eps)
        ana = grad[i].item()
        assert abs(num - ana) <= rel * max(abs(num), abs(ana), 1e-3), (i, num, ana)
