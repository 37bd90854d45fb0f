"""Resilience check: train on the case14 three-line attack, then evaluate and plot.

The attack isolates substations 11 and 12 at the first step; the environment
keeps simulating the islanded grid. Prints the five test-time statistics for the
trained agent and for the do-nothing baseline.

    python scripts/run_resilience.py --out runs/resilience
"""

import argparse
import sys
from pathlib import Path

from gridres import cli

CONFIG = Path(cli.__file__).parent / "configs" / "case14_resilience.json"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(CONFIG))
    parser.add_argument("--out", default="runs/resilience")
    parser.add_argument("--seed", default="0")
    args = parser.parse_args()
    out = Path(args.out)
    common = ["--config", args.config, "--seed", args.seed]

    steps = [
        ["train", *common, "--out", str(out / "train")],
        ["eval", *common, "--checkpoint", str(out / "train" / "checkpoint.zip"), "--out", str(out / "eval")],
        ["baseline", *common, "--out", str(out / "baseline")],
        ["plot", "--curves", str(out / "train" / "curves.csv"), "--out", str(out / "plots")],
    ]
    for argv in steps:
        code = cli.main(argv)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
