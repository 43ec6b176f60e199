"""Coarse boundary proposals from a distance field and a classification map."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np
from scipy import ndimage

from .fields import signed_area

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class Thresholds:
    th_d: float = 0.3
    th_s: float = 0.85

    def __post_init__(self):
        if not 0.0 < self.th_d < 1.0:
            raise ValueError(f"th_d must lie strictly inside (0, 1), got {self.th_d}")
        # th_s = 1 is accepted: it disables every imperfect detection
        if not 0.0 < self.th_s <= 1.0:
            raise ValueError(f"th_s must lie in (0, 1], got {self.th_s}")


@dataclass
class BoundaryProposal:
    points: np.ndarray
    score: float
    source_component: int


def binarize_distance(dist: np.ndarray, th_d: float) -> np.ndarray:
    return np.asarray(dist) > th_d


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected labeling; labels are numbered by raster order of each region's first pixel."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    return labels.astype(np.int32), int(n)


def score_region(region: np.ndarray, cls: np.ndarray) -> float:
    """Mean text probability over the pixels of a boolean region mask."""
    values = np.asarray(cls, dtype=np.float64)[region]
    if values.size == 0:
        raise ValueError("cannot score an empty region")
    return float(values.mean())


def filter_candidates(
    regions: Sequence[np.ndarray], scores: Sequence[float], th_s: float, min_pixels: int
) -> list[int]:
    """Indices of regions whose score reaches ``th_s`` and that have at least ``min_pixels`` pixels."""
    return [
        i for i, (region, score) in enumerate(zip(regions, scores)) if score >= th_s and int(region.sum()) >= min_pixels
    ]


def default_min_pixels(n_points: int) -> int:
    return max(n_points, 16)


def trace_contour(region: np.ndarray) -> np.ndarray:
    """Outer contour through the centers of the region's boundary pixels, CCW.

    Holes are ignored.  A region touching the image border is traced along the
    border pixels, so the contour stays closed.
    """
    mask = np.asarray(region, dtype=np.uint8)
    contours, _ = cv2.findContours(mask, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    if not contours:
        raise ValueError("region is empty")
    contour = max(contours, key=len).reshape(-1, 2).astype(np.float64)
    if len(contour) > 1:
        keep = np.any(contour != np.roll(contour, 1, axis=0), axis=1)
        if keep.any():
            contour = contour[keep]
    if signed_area(contour) < 0:
        contour = contour[::-1].copy()
    return contour


def perimeter(polygon: np.ndarray) -> float:
    p = np.asarray(polygon, dtype=np.float64)
    return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())


def canonical_start(polygon: np.ndarray) -> int:
    """Index of the topmost vertex, leftmost among ties."""
    p = np.asarray(polygon)
    return int(np.lexsort((p[:, 0], p[:, 1]))[0])


def resample_uniform(polygon: np.ndarray, n_points: int) -> np.ndarray:
    """``n_points`` points at equal arc-length spacing along the closed polygon.

    Sampling starts at the topmost-then-leftmost vertex and follows the CCW
    orientation of the polygon.
    """
    p = np.asarray(polygon, dtype=np.float64)
    if signed_area(p) < 0:
        p = p[::-1]
    p = np.roll(p, -canonical_start(p), axis=0)
    closed = np.vstack([p, p[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        raise ValueError("polygon has zero perimeter")
    t = np.arange(n_points) * (total / n_points)
    return np.stack([np.interp(t, cum, closed[:, 0]), np.interp(t, cum, closed[:, 1])], axis=1)


def generate_proposals(
    dist: np.ndarray,
    cls: np.ndarray,
    thresholds: Thresholds,
    n_points: int,
    min_pixels: int | None = None,
) -> list[BoundaryProposal]:
    """Binarize, label, score, filter, trace and resample, in component order.

    Points are in the coordinates of the input grids.
    """
    if dist.shape != cls.shape:
        raise ValueError(f"grid shapes differ: {dist.shape} vs {cls.shape}")
    if min_pixels is None:
        min_pixels = default_min_pixels(n_points)
    labels, n = connected_components(binarize_distance(dist, thresholds.th_d))
    boxes = ndimage.find_objects(labels)
    regions, scores, offsets = [], [], []
    for comp, box in enumerate(boxes, start=1):
        region = labels[box] == comp
        regions.append(region)
        scores.append(score_region(region, cls[box]))
        offsets.append((box[1].start, box[0].start))
    proposals = []
    for i in filter_candidates(regions, scores, thresholds.th_s, min_pixels):
        contour = trace_contour(regions[i]) + np.asarray(offsets[i], dtype=np.float64)
        if len(contour) < 3 or perimeter(contour) < 2 * n_points:
            continue
        proposals.append(BoundaryProposal(resample_uniform(contour, n_points), scores[i], i + 1))
    return proposals
