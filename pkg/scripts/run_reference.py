"""Train and evaluate the reference models used by the end-to-end acceptance checks.

    python scripts/run_reference.py --work /tmp/ref [--only main nobel] [--epochs 12]

Datasets are regenerated from their seeds under ``--work``; checkpoints
(weights only), configs, metrics logs and ``report.json`` land in
``reference/``.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import time
from dataclasses import replace
from pathlib import Path

from bplab.benchmark import evaluate_checkpoint
from bplab.config import RunConfig, dump_config
from bplab.model import load_checkpoint, save_checkpoint
from bplab.synth import SceneSpec, write_dataset
from bplab.train import train

ROOT = Path(__file__).resolve().parents[1]
TRAIN_SPEC = SceneSpec(count=2000, seed=1)
TEST_SPEC = SceneSpec(count=200, seed=2)

VARIANTS = {
    "main": {},
    "nobel": {"use_energy_loss": False},
    "n8": {"n_control_points": 8},
    "n28": {"n_control_points": 28},
}


def ensure_dataset(path: Path, spec: SceneSpec) -> Path:
    if not (path / "meta.txt").exists():
        write_dataset(path, spec)
    return path


def variant_config(name: str, epochs: int) -> RunConfig:
    return replace(RunConfig(epochs=epochs, checkpoint_every=2), **VARIANTS[name])


def run_variant(name: str, epochs: int, work: Path, out: Path) -> None:
    cfg = variant_config(name, epochs)
    run_dir = work / "runs" / name
    resume = run_dir / "last.npz"
    t0 = time.time()
    ckpt = train(cfg, work / "train", run_dir, resume=resume if resume.exists() else None)
    model, state, _ = load_checkpoint(ckpt)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"{name}.npz", model, None, {**state, "train_seconds": round(time.time() - t0, 1)})
    shutil.copy(run_dir / "metrics.csv", out / f"{name}_metrics.csv")
    (out / f"{name}_config.txt").write_text(dump_config(cfg), encoding="utf-8")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--work", type=Path, required=True, help="scratch directory for datasets and runs")
    ap.add_argument("--out", type=Path, default=ROOT / "reference")
    ap.add_argument("--only", nargs="*", choices=sorted(VARIANTS), default=list(VARIANTS))
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--skip-train", action="store_true", help="only (re)build report.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    ensure_dataset(args.work / "train", TRAIN_SPEC)
    test_dir = ensure_dataset(args.work / "test", TEST_SPEC)
    if not args.skip_train:
        for name in args.only:
            run_variant(name, args.epochs, args.work, args.out)

    report = {}
    for name in VARIANTS:
        path = args.out / f"{name}.npz"
        if path.exists():
            report[name] = evaluate_checkpoint(path, test_dir)
            logging.info("%s: %s", name, report[name])
    (args.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
