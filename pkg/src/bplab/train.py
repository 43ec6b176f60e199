"""Training loop: field losses, hybrid proposals, iterative refinement, scheduled total loss."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, dump_config
from .detect import assign_to_gt, proposals_from_maps
from .fields import DegeneratePolygonWarning, PolygonAnnotation, PriorMaps, compute_prior_maps
from .losses import (
    loss_bp,
    loss_bt,
    loss_cls,
    loss_dir,
    loss_dist,
    polygon_energies,
    schedule_coefficient,
)
from .model import TextDetector, load_checkpoint, save_checkpoint, to_tensor
from .proposals import Thresholds, resample_uniform
from .synth import augment, load_dataset, read_image
from .transformer import refine_iteratively

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,step,L,L_cls,L_D,L_V,L_P,L_be,L_ie"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Sample:
    image: torch.Tensor  # (3, S, S)
    annotations: list[PolygonAnnotation]  # image coordinates
    maps: PriorMaps  # at feature-map resolution


def learning_rate(cfg: RunConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def sample_seed(cfg: RunConfig, epoch: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, epoch, index])


def map_annotations(annotations: list[PolygonAnnotation], stride: int) -> list[PolygonAnnotation]:
    return [PolygonAnnotation(a.vertices / stride, a.is_ignore) for a in annotations]


def prepare_sample(image: np.ndarray, annotations: list[PolygonAnnotation], cfg: RunConfig, seed=None) -> Sample:
    """Augment (when ``seed`` is given) and build feature-resolution targets."""
    if seed is not None and cfg.augment:
        image, annotations = augment(image, annotations, np.random.default_rng(seed), cfg.crop, cfg.min_crop)
    s = cfg.output_stride
    msize = (-(-image.shape[0] // s), -(-image.shape[1] // s))
    with warnings.catch_warnings():
        # pieces of a few pixels shrink below one cell at map resolution
        warnings.simplefilter("ignore", DegeneratePolygonWarning)
        maps = compute_prior_maps(map_annotations(annotations, s), msize)
    return Sample(to_tensor(image), annotations, maps)


def _stack(samples: list[Sample], attr: str, dtype=torch.float32) -> torch.Tensor:
    return torch.stack([torch.as_tensor(np.asarray(getattr(s.maps, attr)), dtype=dtype) for s in samples])


def gather_proposals(
    pred_prior: np.ndarray, sample: Sample, cfg: RunConfig, thresholds: Thresholds
) -> tuple[np.ndarray, np.ndarray]:
    """Training proposals for one image and the GT control points they are matched to.

    Proposals from the predicted fields are kept when they overlap a care
    instance; instances left without one get a proposal from their own GT
    distance field.  Returns image-space ``(T, N, 2)`` proposals and targets.
    """
    n = cfg.n_control_points
    s = cfg.output_stride
    size = tuple(sample.image.shape[-2:])
    gts = sample.annotations
    props = proposals_from_maps(pred_prior[0], pred_prior[1], s, size, thresholds, n)
    props = sorted(props, key=lambda p: -p.score)[: cfg.max_proposals]
    polys = [p.points for p in props]
    owner = assign_to_gt(polys, gts)
    starts, targets = [], []
    covered = set()
    for poly, o in zip(polys, owner):
        if o < 0:
            continue
        covered.add(o)
        starts.append(poly)
        targets.append(resample_uniform(gts[o].vertices, n))
    labels = sample.maps.labels
    for g, ann in enumerate(gts):
        if ann.is_ignore or g in covered:
            continue
        inst = labels == g + 1
        if not inst.any():
            continue
        fallback = proposals_from_maps(
            inst.astype(np.float64), sample.maps.dist * inst, s, size, Thresholds(thresholds.th_d, 0.5), n, min_pixels=1
        )
        if not fallback:
            continue
        starts.append(fallback[0].points)
        targets.append(resample_uniform(ann.vertices, n))
    if not starts:
        return np.zeros((0, n, 2)), np.zeros((0, n, 2))
    return np.stack(starts), np.stack(targets)


def train_step(model: TextDetector, samples: list[Sample], epoch: int, cfg: RunConfig) -> dict[str, torch.Tensor]:
    weights = cfg.loss_weights()
    thresholds = cfg.thresholds()
    images = torch.stack([s.image for s in samples])
    maps = model(images)
    prior = maps.prior
    gt_cls = _stack(samples, "cls")
    gt_dist = _stack(samples, "dist")
    gt_dir = _stack(samples, "dir")
    labels = _stack(samples, "labels", torch.int64)
    ignore = _stack(samples, "ignore", torch.bool)

    l_cls = loss_cls(prior[:, 0], gt_cls, ignore)
    l_dist = loss_dist(prior[:, 1], gt_dist, gt_cls, ignore, weights.ohem_neg_pos_ratio)
    l_dir = loss_dir(prior[:, 2:4], gt_dir, labels, ignore, cfg.dir_background_weight)

    pred = prior.detach().numpy().astype(np.float64)
    size = tuple(images.shape[-2:])
    starts, targets, polys, owners = [], [], [], []
    for b, sample in enumerate(samples):
        p0, tgt = gather_proposals(pred[b], sample, cfg, thresholds)
        if len(p0) == 0:
            continue
        p0 = torch.tensor(p0, dtype=torch.float32)
        polys.append(
            refine_iteratively(p0, maps, model.transformer, cfg.iterations, size, cfg.output_stride, b, model.prior_mask)
        )
        starts.append(p0)
        targets.append(torch.tensor(tgt, dtype=torch.float32))
        owners.append(torch.full((len(p0),), b))
    zero = prior.sum() * 0.0
    if starts:
        p0 = torch.cat(starts)
        per_iter = [torch.cat([p[k] for p in polys]) for k in range(cfg.iterations)]
        image_index = torch.cat(owners)
        energies = polygon_energies(p0, per_iter, gt_dist, image_index, cfg.output_stride)
        bt = loss_bt(per_iter, torch.cat(targets), energies, cfg.use_energy_loss)
        l_bt, l_p, l_be, l_ie = bt.total, bt.match, bt.be, bt.ie
    else:
        l_bt = l_p = l_be = l_ie = zero
    l_bp = loss_bp(l_cls, l_dist, l_dir, weights)
    total = l_bp + schedule_coefficient(epoch, weights) * l_bt
    return {"L": total, "L_cls": l_cls, "L_D": l_dist, "L_V": l_dir, "L_P": l_p, "L_be": l_be, "L_ie": l_ie}


def _format_metrics(epoch: int, step: int, parts: dict[str, torch.Tensor]) -> str:
    keys = METRICS_HEADER.split(",")[2:]
    return ",".join([str(epoch), str(step)] + [f"{parts[k].item():.8g}" for k in keys])


def load_training_set(data_dir: str | Path) -> list[tuple[str, np.ndarray, list[PolygonAnnotation]]]:
    return [(sid, read_image(path), anns) for sid, path, anns in load_dataset(data_dir)]


def train(
    cfg: RunConfig,
    data,
    out_dir: str | Path,
    resume: str | Path | None = None,
    max_epochs: int | None = None,
) -> Path:
    """Train and return the path of the last good checkpoint.

    ``data`` is a dataset directory or an already loaded list of
    ``(id, image, annotations)``.  ``max_epochs`` stops early (the schedule
    still uses ``cfg.epochs``), which is how interrupted runs are simulated.
    """
    torch.use_deterministic_algorithms(True)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_training_set(data) if isinstance(data, (str, Path)) else list(data)
    if not dataset:
        raise ValueError("training set is empty")
    start_epoch = 0
    step = 0
    if resume is not None:
        model, state, optim_state = load_checkpoint(resume)
        if model.config != cfg:
            log.warning("resume checkpoint config differs from the requested config; using the checkpoint's")
            cfg = model.config
        start_epoch = int(state.get("epoch", -1)) + 1
        step = int(state.get("step", 0))
    else:
        model, optim_state = TextDetector(cfg), None
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    if optim_state is not None:
        optimizer.load_state_dict(optim_state)

    metrics_path = out / "metrics.csv"
    if resume is None or not metrics_path.exists():
        metrics_path.write_text(METRICS_HEADER + "\n", encoding="utf-8")
    last_good = out / "last.npz"
    end_epoch = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    for epoch in range(start_epoch, end_epoch):
        for group in optimizer.param_groups:
            group["lr"] = learning_rate(cfg, epoch)
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 7])).permutation(len(dataset))
        lines = []
        for b0 in range(0, len(order), cfg.batch_size):
            idx = order[b0 : b0 + cfg.batch_size]
            samples = [prepare_sample(dataset[i][1], dataset[i][2], cfg, sample_seed(cfg, epoch, int(i))) for i in idx]
            torch.manual_seed(hash((cfg.seed, epoch, step)) & 0x7FFFFFFF)
            # non-finite weights would send refined points to NaN before any loss exists
            finite = all(bool(torch.isfinite(p).all()) for p in model.parameters())
            parts = train_step(model, samples, epoch, cfg) if finite else None
            if parts is None or not math.isfinite(parts["L"].item()):
                with open(metrics_path, "a", encoding="utf-8") as fh:
                    fh.writelines(lines)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}; last good checkpoint: {last_good}")
            optimizer.zero_grad(set_to_none=True)
            parts["L"].backward()
            optimizer.step()
            lines.append(_format_metrics(epoch, step, parts) + "\n")
            step += 1
        with open(metrics_path, "a", encoding="utf-8") as fh:
            fh.writelines(lines)
        log.info("epoch %d done: %s", epoch, lines[-1].strip())
        state = {"epoch": epoch, "step": step}
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == end_epoch:
            save_checkpoint(last_good, model, optimizer, state)
            if (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"epoch{epoch + 1:04d}.npz", model, optimizer, state)
    model.eval()
    return last_good
