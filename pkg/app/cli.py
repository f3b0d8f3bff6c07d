# app/cli.py
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import ValidationError

from .dataset.render import render_svg
from .dataset.schema import (
    read_frames,
    read_truth,
    truth_path,
    write_frames,
    write_jsonl,
    write_truth,
)
from .dataset.synth import SynthConfig, generate
from .errors import ConfigError, CuboidError, UnknownFrame
from .evaluation import dumps_report, evaluate, format_table, gt_from_frames, gt_from_truth
from .geometry import Box3D
from .pipeline import REFINE_KEY, RefineOptions, match_dataset, refine_dataset
from .settings import Settings, configure_logging, load_settings
from .solver import METHODS, SolverConfig

logger = logging.getLogger(__name__)


def _parse_bounds(text: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--bounds expects LO,HI, got {text!r}")
    return lo, hi


def load_synth_config(path: Optional[str], seed: Optional[int]) -> SynthConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e.msg}")
        except UnicodeDecodeError:
            raise ConfigError(f"{path}: not valid UTF-8")
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    try:
        return SynthConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "<root>"
        raise ConfigError(f"config field {where}: {first.get('msg')}")


# ---------------- commands ----------------

def cmd_synth(args, settings: Settings) -> int:
    cfg = load_synth_config(args.config, args.seed)
    frames, truth = generate(cfg)
    if not args.embed_params:
        for f in frames:
            for o in f.objects:
                o.planted_params = None
    out = Path(args.out)
    write_frames(frames, out)
    write_truth(truth, truth_path(out))
    logger.info("wrote %d frames to %s (truth: %s)", len(frames), out, truth_path(out))
    return 0


def cmd_match(args, settings: Settings) -> int:
    threshold = settings.match_threshold if args.threshold is None else args.threshold
    frames = match_dataset(read_frames(args.input), threshold)
    write_frames(frames, args.out)
    n = sum(1 for f in frames for o in f.objects if "match" in o.annotations)
    logger.info("matched %d proposals at IoU >= %.2f", n, threshold)
    return 0


def cmd_refine(args, settings: Settings) -> int:
    lo, hi = args.bounds
    try:
        solver = SolverConfig(
            lower_bound=lo,
            upper_bound=hi,
            max_iter=settings.max_iter if args.max_iter is None else args.max_iter,
            restarts=args.restarts,
            method=args.solver,
        )
    except CuboidError as e:
        raise ConfigError(str(e))
    opts = RefineOptions(
        solver=solver,
        huber_delta=settings.huber_delta if args.huber_delta is None else args.huber_delta,
        threshold=settings.match_threshold if args.threshold is None else args.threshold,
        jobs=settings.jobs if args.jobs is None else args.jobs,
        augment=args.augment,
        seed=args.seed or 0,
    )
    if opts.huber_delta <= 0:
        raise ConfigError("--huber-delta must be positive")
    if opts.jobs < 1:
        raise ConfigError("--jobs must be >= 1")

    frames, results = refine_dataset(read_frames(args.input), opts)
    out = Path(args.out)
    write_frames(frames, out)
    results_path = Path(args.results) if args.results else out.with_name(out.stem + ".results.jsonl")
    write_jsonl(results, results_path)
    logger.info("wrote %s and %s", out, results_path)
    return 0


def cmd_eval(args, settings: Settings) -> int:
    before = read_frames(args.before)
    after = read_frames(args.after)
    if args.truth:
        gt = gt_from_truth(read_truth(args.truth))
    else:
        gt = gt_from_frames(before)
    report = evaluate(before, after, gt, clamp=args.clamp)
    sys.stdout.write(format_table(report))
    if args.report:
        Path(args.report).write_text(dumps_report(report), encoding="utf-8")
    return 0


def cmd_render(args, settings: Settings) -> int:
    frames = read_frames(args.input)
    frame = next((f for f in frames if f.frame_id == args.frame_id), None)
    if frame is None:
        raise UnknownFrame(f"no frame {args.frame_id!r} in {args.input}")
    before, after = {}, {}
    for o in frame.objects:
        ann = o.annotations.get(REFINE_KEY) or {}
        if ann.get("status") == "refined" and "input_box3d" in ann:
            ib = ann["input_box3d"]
            before[o.object_id] = Box3D(ib["x"], ib["y"], ib["z"], ib["l"], ib["w"], ib["h"], ib["yaw"])
            after[o.object_id] = o.box3d
        else:
            before[o.object_id] = o.box3d
    svg = render_svg(frame, args.camera, before, after)
    Path(args.out).write_text(svg, encoding="utf-8")
    logger.info("wrote %s", args.out)
    return 0


# ---------------- parser ----------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes for refinement")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="DEBUG, INFO, WARNING, ...")

    parser = argparse.ArgumentParser(
        prog="cuboid", description="Refine lidar 3D boxes into image-tight cuboids", parents=[common]
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--config", default=None, help="JSON synth config (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--embed-params", action="store_true", help="keep planted params in the dataset file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", parents=[common], help="match projected proposals to 2D gt boxes")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("refine", parents=[common], help="solve anchor-edge scales per box")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--results", default=None, help="per-box results JSONL")
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--bounds", type=_parse_bounds, default=(0.0, 2.0), help="LO,HI")
    p.add_argument("--huber-delta", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--solver", choices=METHODS, default="nelder-mead")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--augment", type=float, default=0.0, help="D_aug spread for the consistency check (0 = off)")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", parents=[common], help="before/after IoU report")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--truth", default=None, help="truth sidecar; gt_box2d of --before otherwise")
    p.add_argument("--report", default=None, help="flat JSON report path")
    p.add_argument("--clamp", action="store_true", help="clamp projections to the image")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="SVG overlay for one frame and camera")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--frame-id", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("jobs", "seed", "log_level"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        settings = load_settings()
        configure_logging(args.log_level or settings.log_level)
        return args.func(args, settings)
    except CuboidError as e:
        logger.error("%s", e)
        return e.exit_code
    except OSError as e:
        logger.error("I/O error: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
