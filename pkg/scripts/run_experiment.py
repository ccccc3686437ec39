#!/usr/bin/env python3
"""End-to-end desk experiment: data -> cross-validation -> train -> simulate.

Produces, under the workspace directory:

    data/       synthetic recordings (gen-data)
    cv/         report.json + confusion/metrics/trend CSVs + per-fold weights
    models/     one patient's trained weights + holdout ids (train)
    sim/        closed-loop trace.jsonl + latency.json (simulate)

Everything is deterministic in --seed; rerunning overwrites with identical
bytes.  Pass --config to override any subset of the defaults.
"""

import argparse
import sys
from pathlib import Path

from preictal.cli import main as cli_main


def run(argv) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workspace", default="experiment",
                        help="output root (default: ./experiment)")
    parser.add_argument("--config", help="JSON config overrides")
    parser.add_argument("--seed", type=int, help="override the config seed")
    args = parser.parse_args(argv)

    ws = Path(args.workspace)
    passthrough = []
    if args.config:
        passthrough += ["--config", args.config]
    if args.seed is not None:
        passthrough += ["--seed", str(args.seed)]

    steps = [
        ["gen-data", "--out", str(ws / "data")],
        ["cross-validate", "--data", str(ws / "data"), "--out", str(ws / "cv")],
        ["train", "--data", str(ws / "data"), "--out", str(ws / "models")],
        ["simulate", "--data", str(ws / "data"), "--models", str(ws / "models"),
         "--out", str(ws / "sim")],
        ["report", "--report-dir", str(ws / "cv"), "--out", str(ws / "cv")],
    ]
    for step in steps:
        print(f"==> preictal {' '.join(step)}")
        extra = [] if step[0] == "report" else passthrough
        rc = cli_main(step + extra)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
