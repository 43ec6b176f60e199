"""``bplab`` command line: gen-synth, train, detect, eval, render."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .synth import SceneSpec

log = logging.getLogger("bplab")


def cmd_gen_synth(args) -> int:
    from .synth import write_dataset

    spec = load_config(SceneSpec, args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    if args.count is not None:
        spec.count = args.count
    ids = write_dataset(args.out, spec)
    print(f"wrote {len(ids)} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import TrainingDiverged, train

    cfg = load_config(RunConfig, args.config)
    try:
        ckpt = train(cfg, Path(args.data), args.out, resume=args.resume, max_epochs=args.max_epochs)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_detect(args) -> int:
    from .detect import detect_dir
    from .model import load_checkpoint
    from .proposals import Thresholds

    model, _, _ = load_checkpoint(args.ckpt)
    cfg = model.config
    thresholds = Thresholds(
        cfg.th_d if args.th_d is None else args.th_d,
        cfg.th_s if args.th_s is None else args.th_s,
    )
    iters = cfg.iterations if args.iters is None else args.iters
    done = detect_dir(model, args.images, args.out, thresholds, iters, args.n_points)
    print(f"wrote predictions for {len(done)} images to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate_dirs, write_report

    report, files = evaluate_dirs(args.gt, args.pred, args.iou)
    for name in files.missing_predictions:
        print(f"missing prediction: {name}.txt (scored as no detections)", file=sys.stderr)
    for name in files.unexpected_predictions:
        print(f"prediction without ground truth: {name}.txt (ignored)", file=sys.stderr)
    if args.out:
        write_report(report, args.out, files)
    sys.stdout.write(report.to_text())
    return 0


def cmd_render(args) -> int:
    from .render import render_dir, render_file

    if Path(args.image).is_dir():
        written = render_dir(args.image, args.pred, args.out, args.gt)
    else:
        written = [render_file(args.image, args.pred, args.out, args.gt, args.proposals)]
    print(f"wrote {len(written)} overlay(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bplab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic curved-text dataset")
    p.add_argument("--spec", help="scene spec file (key = value)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, help="override the scene count given in --spec")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--config", help="run config file (key = value)")
    p.add_argument("--data", required=True, help="dataset directory with images/ and gts/")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-epochs", type=int, help="stop after this many epochs (schedule unchanged)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run a checkpoint over a directory of images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--th-d", type=float)
    p.add_argument("--th-s", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--n-points", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score prediction files against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", help="directory for report.txt, report.json and per_image.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw proposals, refined boundaries and annotations")
    p.add_argument("--image", required=True, help="image file, or a directory of images")
    p.add_argument("--pred", required=True, help="prediction file, or a directory of them")
    p.add_argument("--gt", help="ground-truth file or directory")
    p.add_argument("--proposals", help="proposal file (default: proposals/ next to --pred)")
    p.add_argument("--out", required=True, help="output PNG, or a directory")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
