"""Ground-truth prior fields computed from polygon annotations.

Coordinates follow the pixel-center convention: the pixel at row ``r`` and
column ``c`` has its center at ``(x, y) = (c, r)``.  Polygon orientation is
measured with the shoelace formula directly in these coordinates, so
"counter-clockwise" means positive signed area with x to the right and y down.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DegeneratePolygonWarning(UserWarning):
    """Emitted when an annotation is too small to rasterize."""


class OverlapWarning(UserWarning):
    """Emitted when two instances claim the same pixel."""


@dataclass
class PolygonAnnotation:
    vertices: np.ndarray
    is_ignore: bool = False

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)


@dataclass
class InstanceScale:
    value: float
    thin: bool = False


@dataclass
class PriorMaps:
    """Supervision targets for one image.

    ``cls`` is 1 on text pixels, ``dist`` is the per-instance normalized
    distance to the nearest boundary pixel and ``dir`` holds the unit vector
    toward that pixel (channel 0 = x, channel 1 = y).
    """

    labels: np.ndarray
    cls: np.ndarray
    dist: np.ndarray
    dir: np.ndarray
    ignore: np.ndarray
    scales: dict[int, InstanceScale] = field(default_factory=dict)


def signed_area(vertices: np.ndarray) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def normalize_polygon(vertices: np.ndarray, size: tuple[int, int] | None = None) -> np.ndarray:
    """Clip to the pixel-center range, drop repeated vertices, orient CCW."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 2).copy()
    if size is not None:
        h, w = size
        v[:, 0] = np.clip(v[:, 0], 0, w - 1)
        v[:, 1] = np.clip(v[:, 1], 0, h - 1)
    if len(v) > 1:
        keep = np.any(v != np.roll(v, 1, axis=0), axis=1)
        if not keep.any():
            keep[0] = True
        v = v[keep]
    if signed_area(v) < 0:
        v = v[::-1].copy()
    return v


def normalize_annotations(annotations: Iterable[PolygonAnnotation], size) -> list[PolygonAnnotation]:
    return [PolygonAnnotation(normalize_polygon(a.vertices, size), a.is_ignore) for a in annotations]


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorized over query points."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = np.zeros(np.broadcast(xs, ys).shape, dtype=bool)
    v = np.asarray(vertices, dtype=np.float64)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            continue
        straddles = (ay > ys) != (by > ys)
        x_cross = ax + (ys - ay) * (bx - ax) / (by - ay)
        inside ^= straddles & (xs < x_cross)
    return inside


def rasterize_instances(polygons: Sequence[PolygonAnnotation], size: tuple[int, int]) -> np.ndarray:
    """Label grid with instance ``i + 1`` for ``polygons[i]``; later instances win overlaps."""
    h, w = size
    if h <= 0 or w <= 0:
        raise ValueError(f"size must be positive, got {size}")
    labels = np.zeros((h, w), dtype=np.int32)
    for idx, poly in enumerate(polygons):
        v = poly.vertices
        if len(v) < 3 or abs(signed_area(v)) < 1.0:
            warnings.warn(f"instance {idx + 1}: degenerate polygon skipped", DegeneratePolygonWarning)
            continue
        c0 = max(int(np.ceil(v[:, 0].min())), 0)
        c1 = min(int(np.floor(v[:, 0].max())), w - 1)
        r0 = max(int(np.ceil(v[:, 1].min())), 0)
        r1 = min(int(np.floor(v[:, 1].max())), h - 1)
        if c1 < c0 or r1 < r0:
            continue
        ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        inside = points_in_polygon(xs, ys, v)
        window = labels[r0 : r1 + 1, c0 : c1 + 1]
        if np.any(inside & (window > 0)):
            warnings.warn(f"instance {idx + 1} overlaps an earlier instance", OverlapWarning)
        window[inside] = idx + 1
    return labels


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Text pixels 4-adjacent to a differently labeled pixel or the image border."""
    padded = np.pad(labels, 1, constant_values=-1)
    center = padded[1:-1, 1:-1]
    differs = (
        (padded[:-2, 1:-1] != center)
        | (padded[2:, 1:-1] != center)
        | (padded[1:-1, :-2] != center)
        | (padded[1:-1, 2:] != center)
    )
    return (labels > 0) & differs


def nearest_boundary(labels: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Per-pixel ``(b_x, b_y)`` of the nearest boundary pixel of the same instance.

    Ties go to the first boundary pixel in raster order.  Background pixels map
    to themselves.
    """
    h, w = labels.shape
    ys, xs = np.mgrid[0:h, 0:w]
    out = np.stack([xs, ys], axis=-1).astype(np.int64)
    bmask = boundary_mask(labels)
    for inst in np.unique(labels):
        if inst == 0:
            continue
        by, bx = np.nonzero(bmask & (labels == inst))
        py, px = np.nonzero(labels == inst)
        for start in range(0, len(py), chunk):
            qy = py[start : start + chunk, None]
            qx = px[start : start + chunk, None]
            d2 = (qx - bx[None, :]) ** 2 + (qy - by[None, :]) ** 2
            j = np.argmin(d2, axis=1)
            out[py[start : start + chunk], px[start : start + chunk], 0] = bx[j]
            out[py[start : start + chunk], px[start : start + chunk], 1] = by[j]
    return out


def _offsets(labels: np.ndarray, nearest: np.ndarray | None) -> np.ndarray:
    if nearest is None:
        nearest = nearest_boundary(labels)
    h, w = labels.shape
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([nearest[..., 0] - xs, nearest[..., 1] - ys]).astype(np.float64)


def compute_direction_field(labels: np.ndarray, nearest: np.ndarray | None = None) -> np.ndarray:
    """Unit vectors from each text pixel toward its nearest boundary pixel, shape (2, H, W)."""
    off = _offsets(labels, nearest)
    norm = np.hypot(off[0], off[1])
    out = np.zeros_like(off)
    ok = (labels > 0) & (norm > 0)
    out[:, ok] = off[:, ok] / norm[ok]
    return out


def compute_distance_field(
    labels: np.ndarray, nearest: np.ndarray | None = None
) -> tuple[np.ndarray, dict[int, InstanceScale]]:
    off = _offsets(labels, nearest)
    norm = np.hypot(off[0], off[1])
    dist = np.zeros(labels.shape, dtype=np.float64)
    scales: dict[int, InstanceScale] = {}
    for inst in np.unique(labels):
        if inst == 0:
            continue
        m = labels == inst
        scale = float(norm[m].max())
        scales[int(inst)] = InstanceScale(scale, thin=scale == 0.0)
        if scale > 0:
            dist[m] = norm[m] / scale
    return dist, scales


def compute_classification_map(labels: np.ndarray) -> np.ndarray:
    return (labels > 0).astype(np.float64)


def ignore_mask(labels: np.ndarray, annotations: Sequence[PolygonAnnotation]) -> np.ndarray:
    ids = [i + 1 for i, a in enumerate(annotations) if a.is_ignore]
    return np.isin(labels, ids) if ids else np.zeros(labels.shape, dtype=bool)


def compute_prior_maps(annotations: Sequence[PolygonAnnotation], size: tuple[int, int]) -> PriorMaps:
    """Rasterize ``annotations`` and derive every supervision map in one pass."""
    anns = normalize_annotations(annotations, size)
    labels = rasterize_instances(anns, size)
    nearest = nearest_boundary(labels)
    dist, scales = compute_distance_field(labels, nearest)
    return PriorMaps(
        labels=labels,
        cls=compute_classification_map(labels),
        dist=dist,
        dir=compute_direction_field(labels, nearest),
        ignore=ignore_mask(labels, anns),
        scales=scales,
    )


# -- ground-truth text files ------------------------------------------------

IGNORE_TAG = "#ignore"


def parse_gt_line(line: str) -> PolygonAnnotation | None:
    line = line.strip()
    if not line:
        return None
    parts = [p.strip() for p in line.split(",")]
    is_ignore = parts[-1] == IGNORE_TAG
    if is_ignore:
        parts = parts[:-1]
    if len(parts) < 6 or len(parts) % 2:
        raise ValueError(f"malformed ground-truth line: {line!r}")
    coords = np.array([float(p) for p in parts], dtype=np.float64).reshape(-1, 2)
    return PolygonAnnotation(coords, is_ignore)


def format_gt_line(ann: PolygonAnnotation) -> str:
    coords = ",".join(_fmt(v) for v in ann.vertices.reshape(-1))
    return coords + ("," + IGNORE_TAG if ann.is_ignore else "")


def load_gt_file(path: str | Path) -> list[PolygonAnnotation]:
    anns = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        ann = parse_gt_line(line)
        if ann is not None:
            anns.append(ann)
    return anns


def write_gt_file(path: str | Path, annotations: Iterable[PolygonAnnotation]) -> None:
    lines = [format_gt_line(a) for a in annotations]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _fmt(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s
