"""Command-line interface: ``ocpose {evaluate,sweep,pr-curve,compare,synth}``.

Machine-readable output goes to stdout or to files under ``--out``; logs go
to stderr. Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .dataset_io import (
    coco_sigmas,
    dump_detections,
    dump_ground_truth,
    load_sigmas,
    write_json,
)
from .errors import OCPoseError, UsageError
from .evaluator import (
    DEFAULT_SWEEP_GRID,
    EvalOptions,
    compare,
    emit_pr_curves,
    evaluate,
    sweep,
)
from .synthetic import SyntheticSpec, generate_synthetic_dataset

logger = logging.getLogger("ocpose")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_float_list(text: str) -> list[float]:
    """``"0.3,0.2,0.0"`` or an inclusive range ``"start:stop:step"``."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise UsageError(f"bad range {text!r}")
            count = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 10) for i in range(count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {text!r}") from exc


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--gt", help="COCO keypoint annotation JSON")
    p.add_argument("--dt", action="append", help="COCO keypoint results JSON (repeat for compare)")
    p.add_argument("--threshold", type=float, default=0.0, help="confidence threshold (default 0)")
    p.add_argument("--sigmas", help="per-joint constants: JSON list of falloff constants, or {'sigmas': [...]} in COCO form")
    p.add_argument("--bbox-expand", type=float, default=1.0, help="box expansion factor for --region bbox")
    p.add_argument("--region", choices=("mask", "bbox"), default="mask", help="score masks/crowds by mask or box")
    p.add_argument("--exclude-crowd-matches", action="store_true", help="leave detection-crowd pairs out of the OCpose mean")
    p.add_argument("--aggregation", choices=("per-image", "pooled"), default="pooled", help="headline OCpose")
    p.add_argument("--interpolation", choices=("envelope", "coco101"), default="envelope")
    p.add_argument("--jobs", type=int, default=1, help="worker threads")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="ocpose", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("evaluate", parents=[common], help="OCpose and mAP at one confidence threshold")

    p = sub.add_parser("sweep", parents=[common], help="find the confidence threshold minimizing OCpose")
    p.add_argument("--grid", default=None, help="thresholds, e.g. 0:0.95:0.01 (default) or 0,0.1,0.2")

    p = sub.add_parser("pr-curve", parents=[common], help="precision-recall curves per confidence threshold")
    p.add_argument("--thresholds", default="0.3,0.2,0.1,0.0")

    sub.add_parser("compare", parents=[common], help="mAP vs OCpose for two or more prediction files")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic GT/results pair")
    p.add_argument("--images", type=int, default=5)
    p.add_argument("--n-poses", type=int, default=3)
    p.add_argument("--n-masks", type=int, default=0)
    p.add_argument("--n-crowds", type=int, default=0)
    p.add_argument("--dets-in-crowds", type=int, default=0)
    p.add_argument("--n-duplicates", type=int, default=0)
    p.add_argument("--n-far-fp", type=int, default=0)
    p.add_argument("--fp-score", type=float, default=0.05)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--width", type=int, default=640)
    return parser


def _options(args) -> EvalOptions:
    sigmas = load_sigmas(args.sigmas) if args.sigmas else coco_sigmas()
    return EvalOptions(
        sigmas=sigmas,
        region_mode=args.region,
        bbox_expand=args.bbox_expand,
        exclude_crowd_matches=args.exclude_crowd_matches,
        aggregation=args.aggregation,
        interpolation=args.interpolation,
        jobs=args.jobs,
    )


def _require(args, *names):
    for name in names:
        if not getattr(args, name):
            raise UsageError(f"--{name} is required for {args.command}")


def _emit(text: str, out: str | None, filename: str) -> None:
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / filename).write_text(text)
        logger.info("wrote %s", d / filename)
    else:
        sys.stdout.write(text)


def _run(args) -> None:
    if args.command == "synth":
        _require(args, "out")
        sigmas = load_sigmas(args.sigmas) if args.sigmas else coco_sigmas()
        spec = SyntheticSpec(
            n_poses=args.n_poses,
            n_masks=args.n_masks,
            n_crowds=args.n_crowds,
            dets_in_crowds=args.dets_in_crowds,
            n_duplicates=args.n_duplicates,
            n_far_fp=args.n_far_fp,
            fp_score=args.fp_score,
            jitter=args.jitter,
            image_size=(args.height, args.width),
            num_keypoints=len(sigmas),
            seed=args.seed,
        )
        scenes = generate_synthetic_dataset(spec, args.images, sigmas)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(dump_ground_truth(scenes, len(sigmas)), out / "gt.json")
        write_json(dump_detections(scenes), out / "dt.json")
        logger.info("wrote %s and %s", out / "gt.json", out / "dt.json")
        return

    _require(args, "gt", "dt")
    options = _options(args)
    if args.command != "compare" and len(args.dt) != 1:
        raise UsageError(f"{args.command} takes exactly one --dt")

    if args.command == "evaluate":
        report = evaluate(args.gt, args.dt[0], args.threshold, options)
        _emit(report.to_json(), args.out, "report.json")
        if args.out:
            _emit(report.per_image_csv(), args.out, "per_image.csv")
    elif args.command == "sweep":
        grid = parse_float_list(args.grid) if args.grid else list(DEFAULT_SWEEP_GRID)
        result = sweep(args.gt, args.dt[0], grid, options)
        _emit(result.to_json(), args.out, "sweep.json")
        if args.out:
            _emit(result.to_csv(), args.out, "sweep.csv")
    elif args.command == "pr-curve":
        _require(args, "out")
        paths = emit_pr_curves(args.gt, args.dt[0], parse_float_list(args.thresholds), args.out, options)
        for p in paths:
            print(p)
    elif args.command == "compare":
        result = compare(args.gt, args.dt, args.threshold, options)
        sys.stdout.write(result.to_text())
        if args.out:
            _emit(result.to_csv(), args.out, "compare.csv")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _run(args)
    except OCPoseError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return 3
    return 0
