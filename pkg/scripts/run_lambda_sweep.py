"""Regularization-weight sweep on the case5 contingency scenario.

Trains ``--seeds`` agents per weight, evaluates each greedily, and writes
lambda_summary.csv / lambda_seeds.csv / baseline.csv under ``--out``.

    python scripts/run_lambda_sweep.py --out runs/lambda
    GRIDRES_THREADS=4 python scripts/run_lambda_sweep.py --out runs/lambda --steps 5000
"""

import argparse
import sys
from pathlib import Path

from gridres import cli

CONFIG = Path(cli.__file__).parent / "configs" / "case5_lambda.json"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(CONFIG))
    parser.add_argument("--out", default="runs/lambda_sweep")
    parser.add_argument("--lambdas", default="0,1e-8,1e-5,1e-3")
    parser.add_argument("--seeds", default="5")
    parser.add_argument("--steps", help="override the configured training steps")
    args = parser.parse_args()

    argv = ["sweep-lambda", "--config", args.config, "--lambdas", args.lambdas, "--seeds", args.seeds, "--out", args.out]
    if args.steps:
        argv += ["--steps", args.steps]
    code = cli.main(argv)
    if code == 0:
        cli.main(["plot", "--curves", str(Path(args.out) / "runs" / "lam=0.0_seed=0" / "curves.csv"),
                  "--out", str(Path(args.out) / "plots_lambda0")])
    return code


if __name__ == "__main__":
    sys.exit(main())
