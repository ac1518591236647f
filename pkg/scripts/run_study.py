#!/usr/bin/env python3
"""Run the bundled multi-domain transfer study end to end.

Drives the same pipeline as the CLI: cache pretrained/source backbones, run
every seed x source x target chain into a JSON-lines result store, emit
domain-distance matrices, and write the analysis CSVs plus a gain table.

Usage:
    python3 scripts/run_study.py --out runs/study            # default study
    python3 scripts/run_study.py --out runs/mine --config my.toml --seed 0
"""

import argparse
import sys

from xferbench import cli


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="working/output directory")
    parser.add_argument("--config", help="TOML experiment config (default: built-in study)")
    parser.add_argument("--seed", type=int, default=None, help="run a single seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel chain workers")
    parser.add_argument("--skip-distance", action="store_true", help="skip distance matrices")
    args = parser.parse_args()

    base = ["--out", args.out]
    if args.config:
        base += ["--config", args.config]
    if args.seed is not None:
        base += ["--seed", str(args.seed)]

    for step in (
        ["train-source", *base],
        ["run-chains", *base, "--jobs", str(args.jobs)],
        *([] if args.skip_distance else [["distance", *base]]),
        ["analyze", *base],
        ["report", "--out", args.out],
    ):
        print(f"==> xferbench {' '.join(step)}")
        code = cli.main(step)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
