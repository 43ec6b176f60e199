"""Deterministic synthetic scenes of curved text-like ribbons, plus training augmentation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np
from shapely.geometry import Polygon, box

from .fields import (
    PolygonAnnotation,
    boundary_mask,
    load_gt_file,
    normalize_polygon,
    rasterize_instances,
    signed_area,
    write_gt_file,
)

log = logging.getLogger(__name__)

MAX_PLACEMENT_TRIES = 60
MAX_CROP_TRIES = 10
ROTATION_SIGMA_DEG = 15.0
ROTATION_LIMIT_DEG = 30.0


@dataclass
class SceneSpec:
    size: tuple[int, int] = (256, 256)
    n_instances: tuple[int, int] = (1, 4)
    curvature: tuple[float, float] = (0.0, 0.9)
    ribbon_width: tuple[float, float] = (18.0, 32.0)
    length: tuple[float, float] = (0.35, 0.8)
    clutter_level: float = 0.5
    min_separation: float = 6.0
    n_points: int = 20
    count: int = 1
    seed: int = 0

    def __post_init__(self):
        self.size = tuple(int(v) for v in self.size)
        self.n_instances = tuple(int(v) for v in self.n_instances)
        if not 0.0 <= self.clutter_level <= 1.0:
            raise ValueError("clutter_level must lie in [0, 1]")
        if self.n_instances[0] < 0 or self.n_instances[1] < self.n_instances[0]:
            raise ValueError(f"bad n_instances range {self.n_instances}")
        if self.min_separation < 2:
            raise ValueError("instances must be separated by at least 2 px")


@dataclass
class Scene:
    image: np.ndarray
    annotations: list[PolygonAnnotation]
    meta: dict = field(default_factory=dict)


def scene_rng(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _ribbon(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    h, w = spec.size
    length = rng.uniform(*spec.length) * min(h, w)
    width = rng.uniform(*spec.ribbon_width)
    c_lo, c_hi = spec.curvature
    k2 = rng.uniform(c_lo, c_hi) * rng.choice([-1.0, 1.0])
    k3 = rng.uniform(-c_hi, c_hi) * 0.5
    n_side = int(rng.integers(7, 16))
    u = np.linspace(-0.5, 0.5, n_side)
    spine = np.stack([u * length, length * (k2 * u**2 + k3 * u**3)], axis=1)
    deriv = np.stack([np.full_like(u, length), length * (2 * k2 * u + 3 * k3 * u**2)], axis=1)
    tangent = deriv / np.linalg.norm(deriv, axis=1, keepdims=True)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    profile = width * (1 + 0.12 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * u + rng.uniform(0, 2 * np.pi)))
    top = spine + normal * profile[:, None] / 2
    bottom = spine - normal * profile[:, None] / 2
    poly = np.vstack([top, bottom[::-1]])
    theta = np.deg2rad(rng.uniform(-50, 50))
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    poly = poly @ rot.T
    return poly - poly.mean(axis=0)


def _place(rng, spec: SceneSpec, placed: list[Polygon]) -> np.ndarray | None:
    h, w = spec.size
    margin = 3.0
    for _ in range(MAX_PLACEMENT_TRIES):
        poly = _ribbon(rng, spec)
        lo, hi = poly.min(axis=0), poly.max(axis=0)
        span = hi - lo
        if span[0] > w - 1 - 2 * margin or span[1] > h - 1 - 2 * margin:
            continue
        offset = np.array(
            [rng.uniform(margin - lo[0], w - 1 - margin - hi[0]), rng.uniform(margin - lo[1], h - 1 - margin - hi[1])]
        )
        poly = poly + offset
        shape = Polygon(poly)
        if not shape.is_valid or not shape.exterior.is_simple:
            continue
        if any(shape.distance(other) < spec.min_separation for other in placed):
            continue
        mask = rasterize_instances([PolygonAnnotation(normalize_polygon(poly, spec.size))], spec.size)
        if boundary_mask(mask).sum() < 2 * spec.n_points:
            continue
        placed.append(shape)
        return normalize_polygon(poly, spec.size)
    return None


def _smooth_noise(rng, size, scale):
    h, w = size
    coarse = rng.normal(size=(max(h // scale, 2), max(w // scale, 2)))
    return cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)


def _render(rng, spec: SceneSpec, polygons: list[np.ndarray]) -> np.ndarray:
    h, w = spec.size
    base = rng.uniform(40, 215, size=3)
    grad = rng.uniform(-40, 40, size=(2, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    img = base + (xx[..., None] / w - 0.5) * grad[0] + (yy[..., None] / h - 0.5) * grad[1]
    img = img + 18 * _smooth_noise(rng, spec.size, 16)[..., None]
    img = np.clip(img, 0, 255).astype(np.uint8)

    n_clutter = int(round(spec.clutter_level * rng.integers(4, 14)))
    for _ in range(n_clutter):
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        kind = rng.integers(0, 3)
        p = (int(rng.integers(0, w)), int(rng.integers(0, h)))
        if kind == 0:
            q = (int(rng.integers(0, w)), int(rng.integers(0, h)))
            cv2.line(img, p, q, color, int(rng.integers(1, 4)))
        elif kind == 1:
            cv2.circle(img, p, int(rng.integers(3, 14)), color, int(rng.choice([-1, 1, 2])))
        else:
            q = (p[0] + int(rng.integers(-20, 20)), p[1] + int(rng.integers(-20, 20)))
            cv2.rectangle(img, p, q, color, int(rng.choice([-1, 1, 2])))

    labels = rasterize_instances([PolygonAnnotation(p) for p in polygons], spec.size)
    for idx, poly in enumerate(polygons, start=1):
        region = labels == idx
        if not region.any():
            continue
        local = img[region].astype(np.float64).mean(axis=0)
        fill = _contrasting(rng, local)
        glyph = _contrasting(rng, fill, margin=50)
        layer = np.zeros_like(img)
        layer[:] = fill.astype(np.uint8)
        _draw_glyphs(rng, layer, poly, glyph)
        img[region] = layer[region]
    noise = rng.normal(0, 5, size=img.shape)
    return np.clip(img.astype(np.float64) + noise, 0, 255).astype(np.uint8)


def _contrasting(rng, ref: np.ndarray, margin: float = 70) -> np.ndarray:
    for _ in range(20):
        c = rng.uniform(0, 255, size=3)
        if abs(c.mean() - ref.mean()) >= margin:
            return c
    return np.where(ref.mean() > 127, np.zeros(3), np.full(3, 255.0))


def _draw_glyphs(rng, layer, poly, color):
    n = len(poly) // 2
    top, bottom = poly[:n], poly[n:][::-1]
    spine = (top + bottom) / 2
    width = float(np.median(np.linalg.norm(top - bottom, axis=1)))
    seg = np.linalg.norm(np.diff(spine, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    step = max(width * 0.55, 4.0)
    col = tuple(int(c) for c in color)
    for t in np.arange(step / 2, cum[-1], step):
        if rng.random() < 0.15:
            continue
        x = np.interp(t, cum, spine[:, 0])
        y = np.interp(t, cum, spine[:, 1])
        axes = (max(int(width * rng.uniform(0.12, 0.25)), 1), max(int(width * rng.uniform(0.2, 0.33)), 1))
        cv2.ellipse(layer, (int(round(x)), int(round(y))), axes, rng.uniform(0, 180), 0, 360, col, -1)


def generate_scene(spec: SceneSpec, index: int = 0) -> Scene:
    """Scene ``index`` of the dataset described by ``spec``; identical inputs give identical scenes."""
    rng = scene_rng(spec.seed, index)
    wanted = int(rng.integers(spec.n_instances[0], spec.n_instances[1] + 1))
    placed: list[Polygon] = []
    polygons = []
    for _ in range(wanted):
        poly = _place(rng, spec, placed)
        if poly is None:
            break
        polygons.append(poly)
    image = _render(rng, spec, polygons)
    meta = {"index": index, "requested": wanted, "placed": len(polygons)}
    if len(polygons) < wanted:
        log.info("scene %d: placed %d of %d instances", index, len(polygons), wanted)
    return Scene(image, [PolygonAnnotation(p) for p in polygons], meta)


# -- augmentation -----------------------------------------------------------


@dataclass
class AugmentParams:
    angle: float = 0.0
    crop: tuple[float, float, float] | None = None  # (x0, y0, side) in the rotated frame
    flip: bool = False


def sample_rotation(rng: np.random.Generator) -> float:
    """Gaussian angle in degrees, rejected until it lies inside the open limit interval."""
    while True:
        a = rng.normal(0.0, ROTATION_SIGMA_DEG)
        if -ROTATION_LIMIT_DEG < a < ROTATION_LIMIT_DEG:
            return float(a)


def augment_matrix(params: AugmentParams, size: tuple[int, int], out_size: int) -> np.ndarray:
    h, w = size
    cx, cy = (w - 1) / 2, (h - 1) / 2
    rot = np.eye(3)
    rot[:2] = cv2.getRotationMatrix2D((cx, cy), params.angle, 1.0)
    x0, y0, side = params.crop if params.crop is not None else (0.0, 0.0, float(max(h, w)))
    s = out_size / side
    crop = np.array([[s, 0, (0.5 - x0) * s - 0.5], [0, s, (0.5 - y0) * s - 0.5], [0, 0, 1]])
    flip = np.eye(3)
    if params.flip:
        flip = np.array([[-1.0, 0, out_size - 1], [0, 1, 0], [0, 0, 1]])
    return flip @ crop @ rot


def transform_annotations(
    annotations: list[PolygonAnnotation], matrix: np.ndarray, out_size: int
) -> list[PolygonAnnotation]:
    """Map polygons through ``matrix`` and clip them to the output frame.

    Pieces keeping less than half their area become ignore regions; slivers
    below one square pixel are dropped.
    """
    frame = box(0, 0, out_size - 1, out_size - 1)
    out = []
    for ann in annotations:
        v = ann.vertices @ matrix[:2, :2].T + matrix[:2, 2]
        shape = Polygon(v)
        if not shape.is_valid:
            shape = shape.buffer(0)
        full = shape.area
        clipped = shape.intersection(frame)
        if clipped.is_empty:
            continue
        if clipped.geom_type != "Polygon":
            parts = [g for g in getattr(clipped, "geoms", []) if g.geom_type == "Polygon"]
            if not parts:
                continue
            clipped = max(parts, key=lambda g: g.area)
        if clipped.area < 1.0:
            continue
        coords = np.asarray(clipped.exterior.coords)[:-1]
        if clipped.equals(shape):
            coords = v
        ignore = ann.is_ignore or clipped.area < 0.5 * full
        out.append(PolygonAnnotation(normalize_polygon(coords, (out_size, out_size)), ignore))
    return out


def apply_augment(
    image: np.ndarray, annotations: list[PolygonAnnotation], params: AugmentParams, out_size: int
) -> tuple[np.ndarray, list[PolygonAnnotation]]:
    h, w = image.shape[:2]
    m = augment_matrix(params, (h, w), out_size)
    if np.allclose(m, np.eye(3)) and (h, w) == (out_size, out_size):
        return image.copy(), [PolygonAnnotation(a.vertices.copy(), a.is_ignore) for a in annotations]
    warped = cv2.warpAffine(
        image, m[:2], (out_size, out_size), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0
    )
    return warped, transform_annotations(annotations, m, out_size)


def augment(
    image: np.ndarray,
    annotations: list[PolygonAnnotation],
    seed,
    out_size: int | None = None,
    min_crop: float = 0.6,
) -> tuple[np.ndarray, list[PolygonAnnotation]]:
    """Random rotation, square crop keeping at least one instance, horizontal flip, resize."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h, w = image.shape[:2]
    out_size = out_size or min(h, w)
    angle = sample_rotation(rng)
    flip = bool(rng.random() < 0.5)
    has_text = any(not a.is_ignore for a in annotations)
    params = AugmentParams(angle, None, flip)
    for _ in range(MAX_CROP_TRIES):
        side = rng.uniform(min_crop, 1.0) * min(h, w)
        crop = (rng.uniform(0, w - side), rng.uniform(0, h - side), side)
        params = AugmentParams(angle, crop, flip)
        m = augment_matrix(params, (h, w), out_size)
        kept = transform_annotations(annotations, m, out_size)
        if not has_text or any(not a.is_ignore for a in kept):
            break
    return apply_augment(image, annotations, params, out_size)


# -- dataset layout ---------------------------------------------------------


def scene_id(index: int) -> str:
    return f"{index:06d}"


def write_dataset(out_dir: str | Path, spec: SceneSpec) -> list[str]:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gts").mkdir(parents=True, exist_ok=True)
    ids = []
    lines = [f"{k} = {_fmt_value(v)}" for k, v in asdict(spec).items()]
    for i in range(spec.count):
        sid = scene_id(i)
        scene = generate_scene(spec, i)
        cv2.imwrite(str(out / "images" / f"{sid}.png"), scene.image[..., ::-1])
        write_gt_file(out / "gts" / f"{sid}.txt", scene.annotations)
        lines.append(f"scene {sid} seed = {spec.seed},{i} placed = {scene.meta['placed']}/{scene.meta['requested']}")
        ids.append(sid)
    (out / "meta.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ids


def load_dataset(root: str | Path) -> list[tuple[str, Path, list[PolygonAnnotation]]]:
    root = Path(root)
    items = []
    for img in sorted((root / "images").glob("*.png")):
        gt = root / "gts" / f"{img.stem}.txt"
        items.append((img.stem, img, load_gt_file(gt) if gt.exists() else []))
    return items


def read_image(path: str | Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise OSError(f"cannot read image {path}")
    return img[..., ::-1].copy()


def _fmt_value(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def polygons_valid(annotations: list[PolygonAnnotation], size: tuple[int, int]) -> bool:
    h, w = size
    for a in annotations:
        v = a.vertices
        if signed_area(v) <= 0 or not Polygon(v).exterior.is_simple:
            return False
        if v[:, 0].min() < 0 or v[:, 1].min() < 0 or v[:, 0].max() > w - 1 or v[:, 1].max() > h - 1:
            return False
    return True

