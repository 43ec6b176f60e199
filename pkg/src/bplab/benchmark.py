"""Held-out evaluation of a checkpoint at every refinement stage."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .detect import detect_image, stage_energies
from .evaluation import evaluate
from .model import load_checkpoint
from .synth import load_dataset, read_image


def evaluate_checkpoint(
    checkpoint: str | Path,
    test_dir: str | Path,
    iou: float = 0.5,
    iterations: int | None = None,
) -> dict:
    """Precision, recall and F for the proposals and each iteration, plus mean boundary energies.

    Stage 0 is the proposals, stage ``k`` the output of iteration ``k``.
    Energies average over proposals that overlap an annotated instance.
    """
    model, state, _ = load_checkpoint(checkpoint)
    cfg = model.config
    iterations = cfg.iterations if iterations is None else iterations
    thresholds = cfg.thresholds()
    n_stages = iterations + 1
    preds: list[dict] = [{} for _ in range(n_stages)]
    gts = {}
    energy_rows = []
    for sid, path, anns in load_dataset(test_dir):
        image = read_image(path)
        dets = detect_image(model, image, thresholds, iterations)
        gts[sid] = anns
        stages = [dets.proposals] + (dets.iterations or [[] for _ in range(iterations)])
        for k in range(n_stages):
            preds[k][sid] = stages[k] if dets.proposals else []
        if dets.iterations:
            energy_rows.append(stage_energies(dets, anns, image.shape[:2]))
    reports = [evaluate(p, gts, iou) for p in preds]
    energies = np.concatenate(energy_rows) if energy_rows else np.zeros((0, n_stages))
    return {
        "precision": [r.precision for r in reports],
        "recall": [r.recall for r in reports],
        "f_measure": [r.f_measure for r in reports],
        "energy": energies.mean(axis=0).tolist() if len(energies) else [0.0] * n_stages,
        "matched_proposals": int(len(energies)),
        "n_points": cfg.n_control_points,
        "use_energy_loss": cfg.use_energy_loss,
        "epochs_trained": int(state.get("epoch", -1)) + 1,
    }
