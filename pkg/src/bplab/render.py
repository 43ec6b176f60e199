"""PNG overlays: blue proposals, red refined boundaries, green annotations."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .evaluation import Detection, load_detections
from .fields import PolygonAnnotation, load_gt_file
from .synth import read_image

# BGR
BLUE = (255, 0, 0)
RED = (0, 0, 255)
GREEN = (0, 200, 0)
GREY = (128, 128, 128)


def _draw(canvas: np.ndarray, polygons, color, thickness: int = 1) -> None:
    for pts in polygons:
        pts = np.round(np.asarray(pts, dtype=np.float64)).astype(np.int32).reshape(-1, 1, 2)
        if len(pts) >= 2:
            cv2.polylines(canvas, [pts], True, color, thickness, lineType=cv2.LINE_AA)


def overlay(
    image: np.ndarray,
    refined: Sequence[Detection] = (),
    proposals: Sequence[Detection] = (),
    gts: Sequence[PolygonAnnotation] = (),
) -> np.ndarray:
    """Draw onto a BGR copy of the RGB ``image``; annotations go first so predictions stay visible."""
    canvas = np.ascontiguousarray(image[..., ::-1])
    _draw(canvas, [g.vertices for g in gts if g.is_ignore], GREY)
    _draw(canvas, [g.vertices for g in gts if not g.is_ignore], GREEN)
    _draw(canvas, [d.points for d in proposals], BLUE)
    _draw(canvas, [d.points for d in refined], RED, 2)
    return canvas


def proposals_for(pred_file: Path) -> Path | None:
    """``detect`` writes proposals next to the final predictions under ``proposals/``."""
    candidate = pred_file.parent / "proposals" / pred_file.name
    return candidate if candidate.exists() else None


def render_file(
    image_path: str | Path,
    pred_path: str | Path,
    out_path: str | Path,
    gt_path: str | Path | None = None,
    proposals_path: str | Path | None = None,
) -> Path:
    pred_path = Path(pred_path)
    if proposals_path is None:
        proposals_path = proposals_for(pred_path)
    canvas = overlay(
        read_image(image_path),
        load_detections(pred_path),
        load_detections(proposals_path) if proposals_path else [],
        load_gt_file(gt_path) if gt_path else [],
    )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(out_path), canvas):
        raise OSError(f"cannot write {out_path}")
    return out_path


def render_dir(
    images_dir: str | Path, pred_dir: str | Path, out_dir: str | Path, gt_dir: str | Path | None = None
) -> list[Path]:
    """One PNG per image that has a prediction file."""
    pred_dir = Path(pred_dir)
    written = []
    for img in sorted(Path(images_dir).glob("*.png")):
        pred = pred_dir / f"{img.stem}.txt"
        if not pred.exists():
            continue
        gt = Path(gt_dir) / f"{img.stem}.txt" if gt_dir else None
        written.append(render_file(img, pred, Path(out_dir) / f"{img.stem}.png", gt if gt and gt.exists() else None))
    return written
