"""Polygon IoU, one-to-one detection matching and precision/recall/F reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from shapely.geometry import Polygon
from shapely.validation import make_valid

from .fields import PolygonAnnotation, load_gt_file


@dataclass
class Detection:
    points: np.ndarray
    score: float


@dataclass
class ImageMatch:
    image_id: str
    tp: int
    fp: int
    fn: int
    n_gt: int
    pairs: list[tuple[int, int, float]] = field(default_factory=list)  # (det index, gt index, iou)


@dataclass
class EvalReport:
    precision: float
    recall: float
    f_measure: float
    iou_threshold: float
    tp: int
    fp: int
    fn: int
    per_image: list[ImageMatch] = field(default_factory=list)
    mean_energy_per_iteration: list[float] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"precision = {self.precision:.6f}",
            f"recall = {self.recall:.6f}",
            f"f_measure = {self.f_measure:.6f}",
            f"iou_threshold = {self.iou_threshold}",
            f"tp = {self.tp}",
            f"fp = {self.fp}",
            f"fn = {self.fn}",
        ]
        if self.mean_energy_per_iteration:
            lines.append("mean_energy_per_iteration = " + ",".join(f"{e:.6f}" for e in self.mean_energy_per_iteration))
        return "\n".join(lines) + "\n"


def _shape(points) -> Polygon | None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        return None
    shape = Polygon(pts)
    if not shape.is_valid:
        shape = make_valid(shape)
    if shape.area <= 0:
        return None
    return shape


def polygon_iou(a, b) -> float:
    """Exact area IoU of two polygons given as ``(k, 2)`` vertex arrays; zero-area input gives 0."""
    pa, pb = _shape(a), _shape(b)
    if pa is None or pb is None:
        return 0.0
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return float(inter / union) if union > 0 else 0.0


def detection_order(detections: Sequence[Detection]) -> list[int]:
    """Score-descending order with index-ascending ties."""
    return sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))


def match_detections(
    detections: Sequence[Detection],
    gts: Sequence[PolygonAnnotation],
    iou_threshold: float = 0.5,
    image_id: str = "",
) -> ImageMatch:
    """Greedy one-to-one matching in descending score order.

    A detection that matches no care region but overlaps an ignore region at
    the threshold is neither a true nor a false positive.
    """
    care = [i for i, g in enumerate(gts) if not g.is_ignore]
    ignored = [i for i, g in enumerate(gts) if g.is_ignore]
    iou = np.array([[polygon_iou(d.points, g.vertices) for g in gts] for d in detections]).reshape(len(detections), len(gts))
    taken: set[int] = set()
    pairs = []
    fp = 0
    for d in detection_order(detections):
        free = [g for g in care if g not in taken and iou[d, g] >= iou_threshold]
        if free:
            best = max(free, key=lambda g: (iou[d, g], -g))
            taken.add(best)
            pairs.append((d, best, float(iou[d, best])))
        elif not any(iou[d, g] >= iou_threshold for g in ignored):
            fp += 1
    tp = len(pairs)
    return ImageMatch(image_id, tp, fp, len(care) - tp, len(care), pairs)


def prf(tp: int, fp: int, n_gt: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / n_gt if n_gt > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def evaluate(
    detections: dict[str, Sequence[Detection]],
    gts: dict[str, Sequence[PolygonAnnotation]],
    iou_threshold: float = 0.5,
) -> EvalReport:
    per_image = [
        match_detections(detections.get(k, []), gts[k], iou_threshold, image_id=k) for k in sorted(gts)
    ]
    tp = sum(m.tp for m in per_image)
    fp = sum(m.fp for m in per_image)
    n_gt = sum(m.n_gt for m in per_image)
    p, r, f = prf(tp, fp, n_gt)
    return EvalReport(p, r, f, iou_threshold, tp, fp, n_gt - tp, per_image)


# -- prediction files -------------------------------------------------------


def format_detection(points: np.ndarray, score: float) -> str:
    coords = ",".join(f"{v:.2f}" for v in np.asarray(points, dtype=np.float64).reshape(-1))
    return f"{score:.6f};{coords}"


def parse_detection(line: str) -> Detection | None:
    line = line.strip()
    if not line:
        return None
    score, _, coords = line.partition(";")
    values = [float(v) for v in coords.split(",") if v.strip()]
    if len(values) % 2:
        raise ValueError(f"odd coordinate count in {line!r}")
    return Detection(np.array(values, dtype=np.float64).reshape(-1, 2), float(score))


def write_detections(path: str | Path, detections: Sequence[Detection]) -> None:
    Path(path).write_text("".join(format_detection(d.points, d.score) + "\n" for d in detections), encoding="utf-8")


def load_detections(path: str | Path) -> list[Detection]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        det = parse_detection(line)
        if det is not None:
            out.append(det)
    return out


@dataclass
class FileSetReport:
    missing_predictions: list[str]
    unexpected_predictions: list[str]


def evaluate_dirs(gt_dir: str | Path, pred_dir: str | Path, iou_threshold: float = 0.5) -> tuple[EvalReport, FileSetReport]:
    """Evaluate every ``gts/*.txt`` against the same-named prediction file.

    A missing prediction file counts as an image with no detections and is
    listed in the returned file report.
    """
    gt_dir, pred_dir = Path(gt_dir), Path(pred_dir)
    gts = {p.stem: load_gt_file(p) for p in sorted(gt_dir.glob("*.txt"))}
    preds_available = {p.stem: p for p in sorted(pred_dir.glob("*.txt"))}
    dets = {k: load_detections(preds_available[k]) for k in gts if k in preds_available}
    files = FileSetReport(
        missing_predictions=sorted(set(gts) - set(preds_available)),
        unexpected_predictions=sorted(set(preds_available) - set(gts)),
    )
    return evaluate(dets, gts, iou_threshold), files


def write_report(report: EvalReport, out_dir: str | Path, files: FileSetReport | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    with open(out / "per_image.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "tp", "fp", "fn", "n_gt"])
        for m in report.per_image:
            writer.writerow([m.image_id, m.tp, m.fp, m.fn, m.n_gt])
    summary = {
        "precision": report.precision,
        "recall": report.recall,
        "f_measure": report.f_measure,
        "iou_threshold": report.iou_threshold,
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "mean_energy_per_iteration": report.mean_energy_per_iteration,
    }
    if files is not None:
        summary["missing_predictions"] = files.missing_predictions
        summary["unexpected_predictions"] = files.unexpected_predictions
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
