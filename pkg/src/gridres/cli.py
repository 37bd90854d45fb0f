"""Command-line entry point: training, evaluation, sweeps, baselines and plots.

Exit codes: 0 success, 1 usage/config/input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, agent, metrics
from .config import ConfigError, ExperimentConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
MANIFEST_VERSION = 1

OBSERVATION_SPACES = ("complete", "essential")
ACTION_SPACES = ("topology", "powerline_set", "topology_set")

# the five test-time statistics, in table order
EVAL_STATISTICS = [
    ("steps_survived", "Steps survived"),
    ("cost", "Cost"),
    ("islands", "Islands"),
    ("unsupplied_load", "Unsupplied load"),
    ("broken_lines", "Broken powerlines"),
]
CURVE_FIELDS = ["episode", "env_step", *metrics.SummaryRecord.field_names(), "epsilon", "mean_loss"]
LAMBDA_FIELDS = [
    "agent", "lambda", "n_seeds",
    "mean_reward", "std_reward", "mean_steps_survived", "std_steps_survived",
]
LAMBDA_SEED_FIELDS = ["lambda", "seed", "mean_reward", "std_reward", "mean_steps_survived", "train_seconds"]
SPACE_FIELDS = [
    "agent", "observation_space", "action_space", "obs_size", "n_actions", "n_seeds",
    "best_smoothed_steps", "best_smoothed_reward",
    "eval_mean_steps", "eval_median_steps", "eval_mean_reward",
]
SPACE_SEED_FIELDS = [
    "observation_space", "action_space", "seed",
    "best_smoothed_steps", "best_smoothed_reward", "eval_mean_steps", "eval_mean_reward",
]
PLOT_METRICS = [
    ("unsupplied_load", "Average unsupplied load"),
    ("islands", "Average islands"),
    ("cost", "Average cost per step"),
    ("broken_lines", "Average disconnected lines"),
    ("total_reward", "Episode reward"),
]


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# --------------------------------------------------------------------------
# manifests and CSV helpers


@dataclass
class RunManifest:
    command: str
    args: dict
    config: dict | None
    seeds: list[int]
    artifacts: list[str] = field(default_factory=list)
    versions: dict = field(default_factory=dict)
    workers: int = 1
    started_at: str = ""
    finished_at: str = ""
    manifest_version: int = MANIFEST_VERSION

    def write(self, out_dir: Path):
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        doc = json.loads(Path(path).read_text())
        if doc.get("manifest_version") != MANIFEST_VERSION:
            raise InputError(f"{path} is not a run manifest")
        return cls(**doc)


def _versions() -> dict:
    import numba

    return {
        "gridres": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
    }


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_rows(path: Path, header: list[str], rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])


def read_curves(path: Path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise InputError(f"{path}: no data")
            missing = [k for k, _ in PLOT_METRICS if k not in reader.fieldnames]
            if missing or "episode" not in reader.fieldnames:
                raise InputError(f"{path}: malformed curves file, missing columns {missing or ['episode']}")
            rows = []
            for line, row in enumerate(reader, start=2):
                try:
                    rows.append({k: float(v) for k, v in row.items()})
                except (TypeError, ValueError) as exc:
                    raise InputError(f"{path}:{line}: malformed row ({exc})") from exc
    except FileNotFoundError as exc:
        raise InputError(f"curves file not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: malformed curves file ({exc})") from exc
    if not rows:
        raise InputError(f"{path}: no data")
    return rows


def smoothed_best(values: list[float], window: int = 100) -> float:
    """Best trailing moving average; windows shorter than ``window`` at the start."""
    if not values:
        return float("nan")
    x = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return float(np.max((csum[idx] - csum[lo]) / (idx - lo)))


def _workers(jobs: int) -> int:
    raw = os.environ.get("GRIDRES_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise UsageError(f"GRIDRES_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(cap, jobs))


def _run_jobs(fn, jobs: list, workers: int) -> list:
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# --------------------------------------------------------------------------
# shared building blocks


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    trainer = {}
    if getattr(args, "steps", None) is not None:
        trainer["total_steps"] = args.steps
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        changes["eval_episodes"] = args.episodes
    if trainer or changes:
        config = config.replace(trainer=trainer, **changes)
    return config


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    return out


def train_one(config: ExperimentConfig, run_dir: Path) -> dict:
    """Train with ``config.seed``; write curves and checkpoint into ``run_dir``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    factory = config.env_factory()
    t0 = time.perf_counter()
    ckpt, curves = agent.train(factory, config.trainer, config.seed)
    seconds = time.perf_counter() - t0
    ckpt.meta = {"config": config.to_dict()}
    ckpt.save(run_dir / "checkpoint.zip")
    write_rows(run_dir / "curves.csv", CURVE_FIELDS, curves)
    return {"checkpoint": ckpt, "curves": curves, "seconds": seconds}


def evaluate_policy(config: ExperimentConfig, policy, seed: int) -> agent.EvalReport:
    return agent.evaluate(
        policy, config.env_factory(), config.eval_episodes, seed, frames=config.trainer.frames
    )


def check_compatible(ckpt: agent.Checkpoint, config: ExperimentConfig):
    env = config.env_factory()()
    spec = ckpt.online.spec
    expected = (config.trainer.frames * env.obs_size, env.n_actions)
    if (spec.input_dim, spec.n_actions) != expected:
        raise ConfigError(
            "incompatible checkpoint: network expects "
            f"{spec.input_dim} inputs / {spec.n_actions} actions, "
            f"environment gives {expected[0]} / {expected[1]}"
        )


def write_eval_outputs(out: Path, report: agent.EvalReport, prefix: str) -> list[str]:
    names = metrics.SummaryRecord.field_names()
    metrics.write_summaries_csv(out / f"{prefix}_episodes.csv", report.summaries)
    rows = [
        {"statistic": key, "mean": report.mean[key], "std": report.std[key]}
        for key in names
    ]
    write_rows(out / f"{prefix}_stats.csv", ["statistic", "mean", "std"], rows)
    logs_dir = out / f"{prefix}_logs"
    logs_dir.mkdir(exist_ok=True)
    for i, log in enumerate(report.logs):
        log.to_jsonl(logs_dir / f"episode_{i:04d}.jsonl")
    return [f"{prefix}_episodes.csv", f"{prefix}_stats.csv", f"{prefix}_logs/"]


def format_stats_table(report: agent.EvalReport, title: str) -> str:
    lines = [title, f"{'Statistic':<20}{'Mean':>12}{'Std':>12}"]
    for key, label in EVAL_STATISTICS:
        lines.append(f"{label:<20}{report.mean[key]:>12.2f}{report.std[key]:>12.2f}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    started = _now()
    config.env_factory()  # validate before training
    config_path = out / "config.json"
    config_path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    result = train_one(config, out)
    curves = result["curves"]
    print(
        f"trained {config.trainer.total_steps} steps, {len(curves)} episodes "
        f"in {result['seconds']:.1f}s -> {out}"
    )
    RunManifest(
        command="train",
        args={"steps": config.trainer.total_steps},
        config=config.to_dict(),
        seeds=[config.seed],
        artifacts=["config.json", "curves.csv", "checkpoint.zip"],
        versions=_versions(),
        started_at=started,
        finished_at=_now(),
    ).write(out)
    return EXIT_OK


def _eval_common(args, policy_name: str, policy) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    started = _now()
    seed = config.seed
    report = evaluate_policy(config, policy, seed)
    artifacts = write_eval_outputs(out, report, "eval")
    print(format_stats_table(report, f"{policy_name}: {len(report.summaries)} episodes"))
    RunManifest(
        command=args.command,
        args={"checkpoint": str(Path(args.checkpoint).resolve()) if getattr(args, "checkpoint", None) else None,
              "episodes": config.eval_episodes},
        config=config.to_dict(),
        seeds=[seed],
        artifacts=artifacts,
        versions=_versions(),
        started_at=started,
        finished_at=_now(),
    ).write(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    path = Path(args.checkpoint)
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    try:
        ckpt = agent.Checkpoint.load(path)
    except (ValueError, KeyError, OSError) as exc:
        raise InputError(f"cannot load checkpoint {path}: {exc}") from exc
    check_compatible(ckpt, config)
    return _eval_common(args, "greedy agent", ckpt)


def cmd_baseline(args) -> int:
    return _eval_common(args, "do-nothing", None)


def _lambda_job(job: dict) -> dict:
    config = ExperimentConfig.from_dict(job["config"])
    result = train_one(config, Path(job["run_dir"]))
    report = evaluate_policy(config, result["checkpoint"], config.seed)
    return {
        "lambda": config.trainer.lam,
        "seed": config.seed,
        "mean_reward": report.mean["total_reward"],
        "std_reward": report.std["total_reward"],
        "mean_steps_survived": report.mean["steps_survived"],
        "train_seconds": round(result["seconds"], 3),
    }


def _summary_row(agent_name: str, lam, rewards: list[float], steps: list[float]) -> dict:
    return {
        "agent": agent_name,
        "lambda": lam,
        "n_seeds": len(rewards),
        "mean_reward": float(np.mean(rewards)),
        "std_reward": float(np.std(rewards)),
        "mean_steps_survived": float(np.mean(steps)),
        "std_steps_survived": float(np.std(steps)),
    }


def _run_dir_name(**parts) -> str:
    return "_".join(f"{k}={v}" for k, v in parts.items())


def _seed_list(config: ExperimentConfig, n_seeds: int) -> list[int]:
    if n_seeds < 1:
        raise UsageError("--seeds must be at least 1")
    return [(config.seed + i) % 2**64 for i in range(n_seeds)]


def cmd_sweep_lambda(args) -> int:
    config = _load_config(args)
    lambdas = args.lambdas
    if any(lam < 0 for lam in lambdas):
        raise UsageError("lambda values must be non-negative")
    out = _out_dir(args)
    started = _now()
    config.env_factory()
    seeds = _seed_list(config, args.seeds)
    jobs = []
    for lam in lambdas:
        for seed in seeds:
            run_config = config.replace(seed=seed, trainer={"lam": lam})
            run_dir = out / "runs" / _run_dir_name(lam=repr(float(lam)), seed=seed)
            jobs.append({"config": run_config.to_dict(), "run_dir": str(run_dir)})
    workers = _workers(len(jobs))
    results = _run_jobs(_lambda_job, jobs, workers)

    write_rows(out / "lambda_seeds.csv", LAMBDA_SEED_FIELDS, results)
    summary = []
    for lam in lambdas:
        rows = [r for r in results if r["lambda"] == lam]
        summary.append(
            _summary_row("ddqn", lam, [r["mean_reward"] for r in rows], [r["mean_steps_survived"] for r in rows])
        )
    write_rows(out / "lambda_summary.csv", LAMBDA_FIELDS, summary)

    base = evaluate_policy(config, None, config.seed)
    baseline = _summary_row("do_nothing", "", [base.mean["total_reward"]], [base.mean["steps_survived"]])
    write_rows(out / "baseline.csv", LAMBDA_FIELDS, [baseline])

    print(f"{'lambda':>10}{'mean reward':>14}{'std':>10}{'mean steps':>12}")
    for row in summary:
        print(f"{row['lambda']:>10g}{row['mean_reward']:>14.2f}{row['std_reward']:>10.2f}{row['mean_steps_survived']:>12.1f}")
    print(f"{'do-nothing':>10}{baseline['mean_reward']:>14.2f}{'':>10}{baseline['mean_steps_survived']:>12.1f}")

    RunManifest(
        command="sweep-lambda",
        args={"lambdas": lambdas, "seeds": args.seeds, "steps": config.trainer.total_steps,
              "episodes": config.eval_episodes},
        config=config.to_dict(),
        seeds=seeds,
        artifacts=["lambda_summary.csv", "lambda_seeds.csv", "baseline.csv", "runs/"],
        versions=_versions(),
        workers=workers,
        started_at=started,
        finished_at=_now(),
    ).write(out)
    return EXIT_OK


def _space_job(job: dict) -> dict:
    config = ExperimentConfig.from_dict(job["config"])
    result = train_one(config, Path(job["run_dir"]))
    curves = result["curves"]
    report = evaluate_policy(config, result["checkpoint"], config.seed)
    env = config.env_factory()()
    return {
        "observation_space": config.observation_space,
        "action_space": config.action_space,
        "seed": config.seed,
        "obs_size": env.obs_size,
        "n_actions": env.n_actions,
        "best_smoothed_steps": smoothed_best([c["steps_survived"] for c in curves]),
        "best_smoothed_reward": smoothed_best([c["total_reward"] for c in curves]),
        "eval_mean_steps": report.mean["steps_survived"],
        "eval_mean_reward": report.mean["total_reward"],
    }


def cmd_sweep_spaces(args) -> int:
    config = _load_config(args)
    out = _out_dir(args)
    started = _now()
    config.env_factory()
    seeds = _seed_list(config, args.seeds)
    cells = [(o, a) for o in args.observation_spaces for a in args.action_spaces]
    jobs = []
    for obs_space, act_space in cells:
        for seed in seeds:
            run_config = config.replace(seed=seed, observation_space=obs_space, action_space=act_space)
            run_dir = out / "runs" / _run_dir_name(obs=obs_space, act=act_space, seed=seed)
            jobs.append({"config": run_config.to_dict(), "run_dir": str(run_dir)})
    workers = _workers(len(jobs))
    results = _run_jobs(_space_job, jobs, workers)
    write_rows(out / "spaces_seeds.csv", SPACE_SEED_FIELDS, results)

    summary = []
    for obs_space, act_space in cells:
        rows = [r for r in results if (r["observation_space"], r["action_space"]) == (obs_space, act_space)]
        summary.append({
            "agent": "ddqn",
            "observation_space": obs_space,
            "action_space": act_space,
            "obs_size": rows[0]["obs_size"],
            "n_actions": rows[0]["n_actions"],
            "n_seeds": len(rows),
            "best_smoothed_steps": float(np.mean([r["best_smoothed_steps"] for r in rows])),
            "best_smoothed_reward": float(np.mean([r["best_smoothed_reward"] for r in rows])),
            "eval_mean_steps": float(np.mean([r["eval_mean_steps"] for r in rows])),
            "eval_median_steps": float(np.median([r["eval_mean_steps"] for r in rows])),
            "eval_mean_reward": float(np.mean([r["eval_mean_reward"] for r in rows])),
        })
    base_report = evaluate_policy(config, None, config.seed)
    base_env = config.env_factory()()
    base_steps = [s.steps_survived for s in base_report.summaries]
    summary.append({
        "agent": "do_nothing",
        "observation_space": config.observation_space,
        "action_space": "",
        "obs_size": base_env.obs_size,
        "n_actions": 1,
        "n_seeds": 1,
        "best_smoothed_steps": smoothed_best(base_steps),
        "best_smoothed_reward": smoothed_best([s.total_reward for s in base_report.summaries]),
        "eval_mean_steps": float(np.mean(base_steps)),
        "eval_median_steps": float(np.median(base_steps)),
        "eval_mean_reward": base_report.mean["total_reward"],
    })
    write_rows(out / "spaces_summary.csv", SPACE_FIELDS, summary)

    print(f"{'agent':<11}{'observation':<12}{'action':<15}{'O':>5}{'|A|':>6}{'best steps':>12}{'median eval':>13}")
    for row in summary:
        print(
            f"{row['agent']:<11}{row['observation_space']:<12}{row['action_space']:<15}"
            f"{row['obs_size']:>5}{row['n_actions']:>6}{row['best_smoothed_steps']:>12.1f}"
            f"{row['eval_median_steps']:>13.1f}"
        )
    RunManifest(
        command="sweep-spaces",
        args={"seeds": args.seeds, "steps": config.trainer.total_steps, "episodes": config.eval_episodes,
              "observation_spaces": list(args.observation_spaces), "action_spaces": list(args.action_spaces)},
        config=config.to_dict(),
        seeds=seeds,
        artifacts=["spaces_summary.csv", "spaces_seeds.csv", "runs/"],
        versions=_versions(),
        workers=workers,
        started_at=started,
        finished_at=_now(),
    ).write(out)
    return EXIT_OK


def cmd_plot(args) -> int:
    rows = read_curves(Path(args.curves))
    out = _out_dir(args)
    started = _now()

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "gridres"
    episodes = [r["episode"] for r in rows]
    artifacts = []
    for key, label in PLOT_METRICS:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(episodes, [r[key] for r in rows], lw=1.2)
        ax.set_xlabel("Episode")
        ax.set_ylabel(label)
        ax.set_xlim(min(episodes), max(episodes) if len(episodes) > 1 else min(episodes) + 1)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        name = f"{key}.svg"
        fig.savefig(out / name, format="svg", metadata={"Date": None})
        plt.close(fig)
        artifacts.append(name)
    print(f"wrote {len(artifacts)} plots to {out}")
    RunManifest(
        command="plot",
        args={"curves": str(Path(args.curves).resolve())},
        config=None,
        seeds=[],
        artifacts=artifacts,
        versions=_versions(),
        started_at=started,
        finished_at=_now(),
    ).write(out)
    return EXIT_OK


def cmd_rerun(args) -> int:
    """Replay a run manifest into a new output directory."""
    manifest = RunManifest.read(args.manifest)
    out = _out_dir(args)
    if manifest.config is None:
        argv = [manifest.command, "--curves", manifest.args["curves"], "--out", str(out)]
        return main(argv)
    config_path = out / "rerun_config.json"
    config_path.write_text(json.dumps(manifest.config, indent=2, sort_keys=True) + "\n")
    argv = [manifest.command, "--config", str(config_path), "--out", str(out)]
    if manifest.command == "eval":
        argv += ["--checkpoint", manifest.args["checkpoint"]]
    if manifest.command == "sweep-lambda":
        argv += ["--lambdas", ",".join(repr(float(x)) for x in manifest.args["lambdas"])]
    if manifest.command in ("sweep-lambda", "sweep-spaces"):
        argv += ["--seeds", str(manifest.args["seeds"])]
    if manifest.command == "sweep-spaces":
        argv += ["--observation-spaces", ",".join(manifest.args["observation_spaces"])]
        argv += ["--action-spaces", ",".join(manifest.args["action_spaces"])]
    return main(argv)


# --------------------------------------------------------------------------
# argument parsing


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list: {text!r}") from exc


def _choice_list(choices):
    def parse(text: str) -> list[str]:
        items = [x.strip() for x in text.split(",") if x.strip()]
        bad = [x for x in items if x not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"expected a comma list from {choices}, got {text!r}")
        return items

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridres", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gridres {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(p, steps=True, episodes=True):
        p.add_argument("--config", required=True, help="experiment JSON config")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        if steps:
            p.add_argument("--steps", type=_positive, help="override trainer.total_steps")
        if episodes:
            p.add_argument("--episodes", type=_positive, help="override eval_episodes")

    p = sub.add_parser("train", help="train one agent")
    common(p, episodes=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    common(p, steps=False)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate the do-nothing policy")
    common(p, steps=False)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("sweep-lambda", help="train and evaluate across regularization weights")
    common(p)
    p.add_argument("--lambdas", type=_float_list, default=[0.0, 1e-8, 1e-5, 1e-3])
    p.add_argument("--seeds", type=_positive, default=5, help="seeds per lambda")
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("sweep-spaces", help="train across observation x action spaces")
    common(p)
    p.add_argument("--seeds", type=_positive, default=5)
    p.add_argument("--observation-spaces", type=_choice_list(OBSERVATION_SPACES), default=list(OBSERVATION_SPACES))
    p.add_argument("--action-spaces", type=_choice_list(ACTION_SPACES), default=list(ACTION_SPACES))
    p.set_defaults(func=cmd_sweep_spaces)

    p = sub.add_parser("plot", help="plot training curves as SVG")
    p.add_argument("--curves", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, InputError) as exc:
        print(f"gridres: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        print(f"gridres: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
