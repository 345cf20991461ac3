"""Run the whole pipeline into one directory.

Usage:
    python scripts/run_pipeline.py [--config CFG] [--out DIR] [--seed N]
                                   [--preset baseline|pyannote-like] [--ablate]

Equivalent to the CLI sequence gen -> diar -> train1 -> select -> train2
-> eval (plus ablate with --ablate), stopping at the first failure.
"""

from __future__ import annotations

import argparse
import sys
import time

from weaksv.cli import main as cli


def run() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default="runs/pipeline")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--preset", default=None, choices=["baseline", "pyannote-like"])
    parser.add_argument("--ablate", action="store_true", help="also run the stage-1 grid")
    args = parser.parse_args()

    common = ["--out", args.out]
    if args.config:
        common += ["--config", args.config]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]

    steps = [["gen"], ["diar"] + (["--preset", args.preset] if args.preset else []),
             ["train1"], ["select"], ["train2"], ["eval"]]
    if args.ablate:
        steps.append(["ablate"])

    started = time.time()
    for step in steps:
        code = cli(step + common)
        if code != 0:
            print(f"pipeline stopped at {step[0]} (exit {code})", file=sys.stderr)
            return code
    print(f"pipeline complete in {time.time() - started:.1f}s -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
