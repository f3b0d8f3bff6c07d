# run_pipeline.py
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from app.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description="synth -> match -> refine -> eval into one folder")
    parser.add_argument("--out-dir", default="runs/latest", help="output folder")
    parser.add_argument("--config", default=None, help="JSON synth config")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--solver", default="nelder-mead")
    args = parser.parse_args()

    out = Path(args.out_dir).resolve()
    out.mkdir(parents=True, exist_ok=True)
    dataset = out / "dataset.jsonl"
    matched = out / "matched.jsonl"
    refined = out / "refined.jsonl"

    synth = ["synth", "--out", str(dataset), "--seed", str(args.seed)]
    if args.config:
        synth += ["--config", args.config]

    stages = [
        synth,
        ["match", "--in", str(dataset), "--out", str(matched)],
        ["refine", "--in", str(matched), "--out", str(refined), "--jobs", str(args.jobs),
         "--seed", str(args.seed), "--solver", args.solver],
        ["eval", "--before", str(matched), "--after", str(refined),
         "--truth", str(dataset.with_name("dataset.truth.jsonl")), "--report", str(out / "report.json")],
    ]
    for argv in stages:
        print(f"[run_pipeline] {argv[0]}")
        code = cli_main(argv)
        if code != 0:
            print(f"[run_pipeline] stage {argv[0]} failed with exit code {code}")
            return code

    print(f"[run_pipeline] done: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
