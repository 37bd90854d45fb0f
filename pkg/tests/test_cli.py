import csv
import json
from pathlib import Path

import numpy as np
import pytest

from gridres import cli
from gridres.config import ConfigError, ExperimentConfig
from gridres.metrics import EpisodeLog, SummaryRecord, episode_summary

CONFIG_DIR = Path(cli.__file__).parent / "configs"

TINY = {
    "grid": "case5",
    "chronics": {"horizon": 20, "amplitude": 0.2},
    "contingency": [],
    "trainer": {"total_steps": 120, "warmup": 40, "batch_size": 8, "trunk": [16], "head_hidden": 8},
    "regularizer": {"kind": "nuclear"},
    "seed": 3,
    "eval_episodes": 2,
}


def write_config(tmp_path: Path, **changes) -> Path:
    doc = {**TINY, **changes}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# configuration files


@pytest.mark.parametrize("name", ["case5_lambda.json", "case14_contingency.json", "case14_resilience.json"])
def test_shipped_configs_load(name):
    config = ExperimentConfig.load(CONFIG_DIR / name)
    env = config.env_factory()()
    assert env.horizon in (100, 150)
    assert ExperimentConfig.from_dict(config.to_dict()) == config


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"grdi": "case5"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"env": {"cooldwn": 2}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"trainer": {"gamma": 2.0}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"action_space": "everything"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"seed": -1})


def test_config_file_references_resolve_relative_to_config(tmp_path):
    (tmp_path / "cont.json").write_text("[1, 4]")
    config = ExperimentConfig.load(write_config(tmp_path, contingency="cont.json"))
    assert config.env_config().contingency.lines == (1, 4)
    assert config.to_dict()["contingency"] == str((tmp_path / "cont.json").resolve())


def test_config_replace_merges_trainer():
    config = ExperimentConfig.from_dict(TINY)
    other = config.replace(seed=9, trainer={"lam": 1e-5})
    assert other.seed == 9 and other.trainer.lam == 1e-5
    assert other.trainer.trunk == (16,) and config.trainer.lam == 0.0


def test_contingency_out_of_range():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TINY, "contingency": [99]}).env_factory()


# --------------------------------------------------------------------------
# exit codes


def test_help_and_version_exit_zero(capsys):
    assert cli.main(["--help"]) == 0
    assert cli.main(["--version"]) == 0
    assert "gridres" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [[], ["fly"], ["train", "--out", "x"], ["train", "--config", "c", "--out", "o", "--seed", "-4"],
     ["sweep-spaces", "--config", "c", "--out", "o", "--action-spaces", "teleport"]],
)
def test_usage_errors_exit_one(argv, capsys):
    assert cli.main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_missing_config_exits_one(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 1
    assert "none.json" in capsys.readouterr().err


def test_missing_chronics_names_path(tmp_path, capsys):
    cfg = write_config(tmp_path, chronics="nowhere/chronics.csv")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "nowhere/chronics.csv" in capsys.readouterr().err


def test_runtime_failure_exits_two(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(cli.agent, "train", boom)
    assert cli.main(["train", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "o")]) == 2
    assert "solver exploded" in capsys.readouterr().err


# --------------------------------------------------------------------------
# train / eval / baseline


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    cfg = write_config(root)
    assert cli.main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return cfg, root / "run"


def test_train_outputs(trained):
    _, run = trained
    for name in ("config.json", "curves.csv", "checkpoint.zip", "manifest.json"):
        assert (run / name).exists()
    with open(run / "curves.csv") as fh:
        assert next(csv.reader(fh)) == cli.CURVE_FIELDS
    rows = read_csv(run / "curves.csv")
    assert len(rows) == 6 and rows[-1]["env_step"] == "120"
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seeds"] == [3] and manifest["config"]["trainer"]["total_steps"] == 120


def test_train_same_seed_byte_identical(trained, tmp_path):
    cfg, run = trained
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    for name in ("curves.csv", "checkpoint.zip", "config.json"):
        assert (tmp_path / "again" / name).read_bytes() == (run / name).read_bytes()
    assert cli.main(["train", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other" / "curves.csv").read_bytes() != (run / "curves.csv").read_bytes()


def test_eval_one_episode_zero_std(trained, tmp_path, capsys):
    cfg, run = trained
    out = tmp_path / "eval"
    argv = ["eval", "--config", str(cfg), "--checkpoint", str(run / "checkpoint.zip"), "--episodes", "1"]
    assert cli.main([*argv, "--out", str(out)]) == 0
    stats = read_csv(out / "eval_stats.csv")
    names = [r["statistic"] for r in stats]
    assert set(name for name, _ in cli.EVAL_STATISTICS) <= set(names)
    assert names == list(SummaryRecord.field_names())
    assert all(float(r["std"]) == 0.0 for r in stats)
    printed = capsys.readouterr().out
    for _, label in cli.EVAL_STATISTICS:
        assert label in printed


def test_eval_csv_matches_logs(trained, tmp_path):
    cfg, run = trained
    out = tmp_path / "eval"
    argv = ["eval", "--config", str(cfg), "--checkpoint", str(run / "checkpoint.zip"), "--episodes", "3"]
    assert cli.main([*argv, "--out", str(out)]) == 0
    logs = sorted((out / "eval_logs").glob("episode_*.jsonl"))
    assert len(logs) == 3
    summaries = [episode_summary(EpisodeLog.from_jsonl(p)) for p in logs]
    stats = {r["statistic"]: r for r in read_csv(out / "eval_stats.csv")}
    for name, _ in cli.EVAL_STATISTICS:
        values = [float(getattr(s, name)) for s in summaries]
        assert float(stats[name]["mean"]) == pytest.approx(np.mean(values), abs=1e-12)
        assert float(stats[name]["std"]) == pytest.approx(np.std(values), abs=1e-12)
    episodes = read_csv(out / "eval_episodes.csv")
    assert [int(r["steps_survived"]) for r in episodes] == [s.steps_survived for s in summaries]


def test_eval_rejects_incompatible_checkpoint(trained, tmp_path, capsys):
    cfg, run = trained
    other = write_config(tmp_path, action_space="topology_set")
    argv = ["eval", "--config", str(other), "--checkpoint", str(run / "checkpoint.zip"), "--out", str(tmp_path / "e")]
    assert cli.main(argv) == 1
    assert "incompatible" in capsys.readouterr().err


def test_eval_missing_checkpoint(trained, tmp_path):
    cfg, _ = trained
    argv = ["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "no.zip"), "--out", str(tmp_path / "e")]
    assert cli.main(argv) == 1


def test_baseline_healthy_survives_horizon(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.main(["baseline", "--config", str(cfg), "--episodes", "3", "--out", str(tmp_path / "b")]) == 0
    rows = read_csv(tmp_path / "b" / "eval_episodes.csv")
    assert [int(r["steps_survived"]) for r in rows] == [20, 20, 20]


def test_baseline_without_generation_survives_one_step(tmp_path):
    cfg = write_config(tmp_path, contingency=[0, 1, 2, 3, 4])
    assert cli.main(["baseline", "--config", str(cfg), "--episodes", "2", "--out", str(tmp_path / "b")]) == 0
    rows = read_csv(tmp_path / "b" / "eval_episodes.csv")
    assert [int(r["steps_survived"]) for r in rows] == [1, 1]


# --------------------------------------------------------------------------
# sweeps


def test_sweep_lambda_shape_and_consistency(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "sweep"
    argv = ["sweep-lambda", "--config", str(cfg), "--lambdas", "0,1e-8,1e-3", "--seeds", "2", "--out", str(out)]
    assert cli.main(argv) == 0
    summary = read_csv(out / "lambda_summary.csv")
    assert [float(r["lambda"]) for r in summary] == [0.0, 1e-8, 1e-3]
    assert all(r["agent"] == "ddqn" and r["n_seeds"] == "2" for r in summary)
    assert len(read_csv(out / "lambda_seeds.csv")) == 6
    assert read_csv(out / "baseline.csv")[0]["agent"] == "do_nothing"
    # the lambda = 0 runs are exactly what `train --seed s` produces
    for seed in (3, 4):
        single = tmp_path / f"train{seed}"
        assert cli.main(["train", "--config", str(cfg), "--seed", str(seed), "--out", str(single)]) == 0
        run = out / "runs" / f"lam=0.0_seed={seed}"
        assert (run / "curves.csv").read_bytes() == (single / "curves.csv").read_bytes()
        assert (run / "checkpoint.zip").read_bytes() == (single / "checkpoint.zip").read_bytes()


def test_sweep_lambda_rejects_negative(tmp_path):
    argv = ["sweep-lambda", "--config", str(write_config(tmp_path)), "--lambdas", "0,-1", "--out", str(tmp_path / "s")]
    assert cli.main(argv) == 1


def test_sweep_spaces_cross_product(tmp_path, monkeypatch):
    monkeypatch.setenv("GRIDRES_THREADS", "1")
    cfg = write_config(tmp_path, trainer={**TINY["trainer"], "total_steps": 60})
    out = tmp_path / "spaces"
    argv = ["sweep-spaces", "--config", str(cfg), "--seeds", "1", "--episodes", "1", "--out", str(out)]
    assert cli.main(argv) == 0
    summary = read_csv(out / "spaces_summary.csv")
    cells = [(r["observation_space"], r["action_space"]) for r in summary if r["agent"] == "ddqn"]
    assert len(cells) == 6 and len(set(cells)) == 6
    assert [r["agent"] for r in summary].count("do_nothing") == 1
    sizes = {r["observation_space"]: int(r["obs_size"]) for r in summary if r["agent"] == "ddqn"}
    assert sizes == {"essential": 82, "complete": 103}
    actions = {r["action_space"]: int(r["n_actions"]) for r in summary if r["agent"] == "ddqn"}
    assert actions == {"powerline_set": 17, "topology_set": 80, "topology": 109}


def test_smoothed_best():
    assert cli.smoothed_best([1.0, 2.0, 3.0], window=2) == 2.5
    assert cli.smoothed_best([4.0], window=100) == 4.0
    assert cli.smoothed_best([5.0] * 300) == 5.0


# --------------------------------------------------------------------------
# plots and manifests


def test_plot_five_files(trained, tmp_path):
    _, run = trained
    assert cli.main(["plot", "--curves", str(run / "curves.csv"), "--out", str(tmp_path / "p")]) == 0
    svgs = sorted(p.name for p in (tmp_path / "p").glob("*.svg"))
    assert svgs == sorted(f"{key}.svg" for key, _ in cli.PLOT_METRICS)
    assert cli.main(["plot", "--curves", str(run / "curves.csv"), "--out", str(tmp_path / "q")]) == 0
    for name in svgs:
        assert (tmp_path / "p" / name).read_bytes() == (tmp_path / "q" / name).read_bytes()


def test_plot_constant_metric(tmp_path):
    rows = [{k: 0 for k in cli.CURVE_FIELDS} | {"episode": i, "islands": 1.0} for i in range(4)]
    cli.write_rows(tmp_path / "c.csv", cli.CURVE_FIELDS, rows)
    assert cli.main(["plot", "--curves", str(tmp_path / "c.csv"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "islands.svg").stat().st_size > 0


def test_plot_no_data(tmp_path, capsys):
    (tmp_path / "c.csv").write_text(",".join(cli.CURVE_FIELDS) + "\n")
    assert cli.main(["plot", "--curves", str(tmp_path / "c.csv"), "--out", str(tmp_path / "p")]) == 1
    assert "no data" in capsys.readouterr().err


@pytest.mark.parametrize("content", ["episode,islands\n0,1\n", "a;b\n1;2\n"])
def test_plot_malformed(tmp_path, content, capsys):
    (tmp_path / "c.csv").write_text(content)
    assert cli.main(["plot", "--curves", str(tmp_path / "c.csv"), "--out", str(tmp_path / "p")]) == 1
    assert "malformed" in capsys.readouterr().err


def test_plot_bad_value(tmp_path):
    rows = [{k: 0 for k in cli.CURVE_FIELDS} | {"islands": "many"}]
    cli.write_rows(tmp_path / "c.csv", cli.CURVE_FIELDS, rows)
    assert cli.main(["plot", "--curves", str(tmp_path / "c.csv"), "--out", str(tmp_path / "p")]) == 1


def test_rerun_reproduces_train(trained, tmp_path):
    _, run = trained
    assert cli.main(["rerun", str(run / "manifest.json"), "--out", str(tmp_path / "r")]) == 0
    for name in ("curves.csv", "checkpoint.zip"):
        assert (tmp_path / "r" / name).read_bytes() == (run / name).read_bytes()


def test_rerun_rejects_non_manifest(tmp_path):
    (tmp_path / "m.json").write_text("{}")
    assert cli.main(["rerun", str(tmp_path / "m.json"), "--out", str(tmp_path / "r")]) == 1
