"""Inference: fields, proposals, iterative refinement, prediction files."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch
from scipy import ndimage

from .evaluation import Detection, polygon_iou, write_detections
from .fields import PolygonAnnotation, compute_prior_maps
from .losses import boundary_energy
from .model import TextDetector, to_tensor
from .proposals import BoundaryProposal, Thresholds, generate_proposals
from .synth import read_image
from .transformer import refine_iteratively

log = logging.getLogger(__name__)


@dataclass
class ImageDetections:
    proposals: list[Detection]
    iterations: list[list[Detection]] = field(default_factory=list)

    @property
    def final(self) -> list[Detection]:
        return self.iterations[-1] if self.iterations else self.proposals


def letterbox(image: np.ndarray, size: int) -> tuple[np.ndarray, float]:
    """Resize the longer side to ``size`` keeping the aspect ratio, pad bottom/right with zeros."""
    h, w = image.shape[:2]
    scale = size / max(h, w)
    if scale != 1.0:
        nw, nh = max(int(round(w * scale)), 1), max(int(round(h * scale)), 1)
        image = cv2.resize(image, (nw, nh), interpolation=cv2.INTER_LINEAR)
    out = np.zeros((size, size, 3), dtype=image.dtype)
    out[: image.shape[0], : image.shape[1]] = image
    return out, scale


def upsample_maps(maps: np.ndarray, stride: int, size: tuple[int, int]) -> np.ndarray:
    """Bilinear ``(C, h, w)`` -> ``(C, H, W)``; image pixel ``(x, y)`` reads map position ``(x / s, y / s)``."""
    maps = np.asarray(maps, dtype=np.float64)
    if stride == 1 and maps.shape[1:] == tuple(size):
        return maps
    ys, xs = np.mgrid[0 : size[0], 0 : size[1]].astype(np.float64) / stride
    return np.stack([ndimage.map_coordinates(c, [ys, xs], order=1, mode="nearest") for c in maps])


def proposals_from_maps(
    cls: np.ndarray,
    dist: np.ndarray,
    stride: int,
    size: tuple[int, int],
    thresholds: Thresholds,
    n_points: int,
    min_pixels: int | None = None,
) -> list[BoundaryProposal]:
    """Proposals in image coordinates from map-resolution fields.

    The fields are upsampled first so that the size and perimeter filters
    count image pixels whatever the output stride.
    """
    up_cls, up_dist = upsample_maps(np.stack([cls, dist]), stride, size)
    return generate_proposals(up_dist, up_cls, thresholds, n_points, min_pixels)


@torch.no_grad()
def detect_image(
    model: TextDetector,
    image: np.ndarray,
    thresholds: Thresholds,
    iterations: int,
    n_points: int | None = None,
    test_size: int | None = None,
) -> ImageDetections:
    """Run the detector on one RGB image; polygons come back in the image's own coordinates."""
    cfg = model.config
    n_points = n_points or cfg.n_control_points
    test_size = test_size or cfg.crop
    padded, scale = letterbox(image, test_size)
    maps = model(to_tensor(padded)[None])
    prior = maps.prior[0].numpy()
    s = model.stride
    props = proposals_from_maps(prior[0], prior[1], s, padded.shape[:2], thresholds, n_points)
    proposals = [Detection(p.points / scale, p.score) for p in props]
    result = ImageDetections(proposals)
    if not props or iterations < 1:
        return result
    start = torch.tensor(np.stack([p.points for p in props]), dtype=torch.float32)
    polys = refine_iteratively(
        start, maps, model.transformer, iterations, (test_size, test_size), s, prior_mask=model.prior_mask
    )
    for poly in polys:
        pts = poly.numpy().astype(np.float64) / scale
        result.iterations.append([Detection(pts[i], props[i].score) for i in range(len(props))])
    return result


def detect_dir(
    model: TextDetector,
    images_dir: str | Path,
    out_dir: str | Path,
    thresholds: Thresholds,
    iterations: int,
    n_points: int | None = None,
) -> list[str]:
    """Write ``{id}.txt`` (final), ``proposals/{id}.txt`` and ``iter{k}/{id}.txt`` for each image.

    Unreadable images are skipped and listed in ``errors.log``; returns the processed ids.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "proposals").mkdir(exist_ok=True)
    for k in range(1, iterations + 1):
        (out / f"iter{k}").mkdir(exist_ok=True)
    errors = []
    done = []
    paths = sorted(p for p in Path(images_dir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    for path in paths:
        try:
            image = read_image(path)
        except OSError as exc:
            errors.append(f"{path.name}: {exc}")
            log.warning("skipping %s: %s", path, exc)
            continue
        dets = detect_image(model, image, thresholds, iterations, n_points)
        write_detections(out / f"{path.stem}.txt", dets.final)
        write_detections(out / "proposals" / f"{path.stem}.txt", dets.proposals)
        for k, it in enumerate(dets.iterations, start=1):
            write_detections(out / f"iter{k}" / f"{path.stem}.txt", it)
        if len(dets.iterations) < iterations:
            for k in range(len(dets.iterations) + 1, iterations + 1):
                write_detections(out / f"iter{k}" / f"{path.stem}.txt", [])
        done.append(path.stem)
    (out / "errors.log").write_text("".join(e + "\n" for e in errors), encoding="utf-8")
    return done


def assign_to_gt(polygons: list[np.ndarray], gts: list[PolygonAnnotation]) -> list[int]:
    """Index of the non-ignore GT with maximal IoU for each polygon, or -1 when all IoUs are zero."""
    out = []
    for poly in polygons:
        best, best_iou = -1, 0.0
        for g, ann in enumerate(gts):
            if ann.is_ignore:
                continue
            iou = polygon_iou(poly, ann.vertices)
            if iou > best_iou:
                best, best_iou = g, iou
        out.append(best)
    return out


def stage_energies(dets: ImageDetections, gts: list[PolygonAnnotation], size: tuple[int, int]) -> np.ndarray:
    """``(matched proposals, 1 + iterations)`` boundary energies on the full-resolution GT distance field.

    Proposals with zero IoU against every non-ignore instance are left out.
    """
    stages = [dets.proposals] + dets.iterations
    if not dets.proposals:
        return np.zeros((0, len(stages)))
    owner = assign_to_gt([d.points for d in dets.proposals], gts)
    dist = torch.tensor(compute_prior_maps(gts, size).dist, dtype=torch.float64)
    rows = []
    for i, o in enumerate(owner):
        if o >= 0:
            rows.append([float(boundary_energy(torch.tensor(stage[i].points), dist)) for stage in stages])
    return np.array(rows).reshape(-1, len(stages))


@torch.no_grad()
def energy_diagnostics(
    model: TextDetector,
    dataset: list[tuple[str, np.ndarray, list[PolygonAnnotation]]],
    iterations: int,
    thresholds: Thresholds,
    n_points: int | None = None,
) -> list[float]:
    """Mean boundary energy of matched proposals after each iteration ``k = 0..iterations``."""
    rows = [
        stage_energies(detect_image(model, image, thresholds, iterations, n_points), gts, image.shape[:2])
        for _, image, gts in dataset
    ]
    rows = [r for r in rows if len(r) and r.shape[1] == iterations + 1]
    if not rows:
        return [0.0] * (iterations + 1)
    return np.concatenate(rows).mean(axis=0).tolist()
