"""Observation x action space comparison on the case14 contingency scenario.

By default runs the full {complete, essential} x {topology, powerline_set,
topology_set} grid; narrow it with --observation-spaces / --action-spaces.

    python scripts/run_space_sweep.py --out runs/spaces --seeds 3
    python scripts/run_space_sweep.py --action-spaces powerline_set --seeds 3
"""

import argparse
import sys
from pathlib import Path

from gridres import cli

CONFIG = Path(cli.__file__).parent / "configs" / "case14_contingency.json"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(CONFIG))
    parser.add_argument("--out", default="runs/space_sweep")
    parser.add_argument("--seeds", default="3")
    parser.add_argument("--observation-spaces", default=",".join(cli.OBSERVATION_SPACES))
    parser.add_argument("--action-spaces", default=",".join(cli.ACTION_SPACES))
    parser.add_argument("--steps", help="override the configured training steps")
    args = parser.parse_args()

    argv = [
        "sweep-spaces", "--config", args.config, "--seeds", args.seeds, "--out", args.out,
        "--observation-spaces", args.observation_spaces, "--action-spaces", args.action_spaces,
    ]
    if args.steps:
        argv += ["--steps", args.steps]
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())
