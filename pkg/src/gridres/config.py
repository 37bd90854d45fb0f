"""Experiment configuration: one JSON file describes the grid, scenario and trainer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import TrainerConfig
from .env import (
    ActionSpaceKind,
    Chronics,
    ChronicsSpec,
    ContingencyEvent,
    EnvConfig,
    GridEnv,
    ObservationSpaceKind,
)
from .grid import load_grid


class ConfigError(ValueError):
    pass


TOP_LEVEL_KEYS = {
    "grid",
    "chronics",
    "contingency",
    "action_space",
    "observation_space",
    "env",
    "trainer",
    "regularizer",
    "seed",
    "eval_episodes",
}
ENV_KEYS = {"cooldown", "max_overflow_steps", "c_re"}


def _resolve(path: str, base_dir: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return p


@dataclass
class ExperimentConfig:
    grid: str = "case5"
    # a ChronicsSpec mapping, or a path to a chronics CSV
    chronics: dict | str = field(default_factory=dict)
    # a list of line ids, or a path to a JSON list
    contingency: list[int] | str = field(default_factory=list)
    action_space: str = ActionSpaceKind.POWERLINE_SET.value
    observation_space: str = ObservationSpaceKind.ESSENTIAL.value
    env: dict = field(default_factory=dict)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seed: int = 0
    eval_episodes: int = 20
    base_dir: Path | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        env = dict(doc.get("env", {}))
        if set(env) - ENV_KEYS:
            raise ConfigError(f"unknown env keys: {sorted(set(env) - ENV_KEYS)}")
        trainer_doc = dict(doc.get("trainer", {}))
        if "regularizer" in doc:
            trainer_doc["regularizer"] = doc["regularizer"]
        try:
            trainer = TrainerConfig.from_dict(trainer_doc)
            ActionSpaceKind(doc.get("action_space", cls.action_space))
            ObservationSpaceKind(doc.get("observation_space", cls.observation_space))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        seed = int(doc.get("seed", 0))
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return cls(
            grid=doc.get("grid", "case5"),
            chronics=doc.get("chronics", {}),
            contingency=doc.get("contingency", []),
            action_space=doc.get("action_space", cls.action_space),
            observation_space=doc.get("observation_space", cls.observation_space),
            env=env,
            trainer=trainer,
            seed=seed,
            eval_episodes=int(doc.get("eval_episodes", 20)),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, base_dir=path.resolve().parent)

    def to_dict(self) -> dict:
        """Fully resolved form; file references become absolute paths."""
        chronics = self.chronics
        if isinstance(chronics, str):
            chronics = str(_resolve(chronics, self.base_dir).resolve())
        contingency = self.contingency
        if isinstance(contingency, str):
            contingency = str(_resolve(contingency, self.base_dir).resolve())
        trainer = self.trainer.to_dict()
        regularizer = trainer.pop("regularizer")
        return {
            "grid": self.grid,
            "chronics": chronics,
            "contingency": contingency,
            "action_space": self.action_space,
            "observation_space": self.observation_space,
            "env": dict(self.env),
            "trainer": trainer,
            "regularizer": regularizer,
            "seed": self.seed,
            "eval_episodes": self.eval_episodes,
        }

    def replace(self, **changes) -> ExperimentConfig:
        doc = self.to_dict()
        trainer_changes = changes.pop("trainer", {})
        doc.update(changes)
        doc["trainer"] = {**doc["trainer"], **trainer_changes}
        return ExperimentConfig.from_dict(doc, base_dir=self.base_dir)

    # ----------------------------------------------------------------------

    def _grid_source(self) -> str:
        name = self.grid
        if name.endswith(".json"):
            path = _resolve(name, self.base_dir)
            if not path.exists():
                raise ConfigError(f"grid file not found: {path}")
            return str(path)
        return name

    def _chronics(self) -> ChronicsSpec | Chronics:
        if isinstance(self.chronics, str):
            path = _resolve(self.chronics, self.base_dir)
            if not path.exists():
                raise ConfigError(f"chronics file not found: {path}")
            try:
                return Chronics.from_csv(path)
            except ValueError as exc:
                raise ConfigError(f"bad chronics file {path}: {exc}") from exc
        try:
            return ChronicsSpec(**self.chronics)
        except TypeError as exc:
            raise ConfigError(f"bad chronics spec: {exc}") from exc

    def _contingency(self) -> ContingencyEvent:
        if isinstance(self.contingency, str):
            path = _resolve(self.contingency, self.base_dir)
            if not path.exists():
                raise ConfigError(f"contingency file not found: {path}")
            return ContingencyEvent.from_json(path)
        return ContingencyEvent(tuple(int(l) for l in self.contingency))

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            action_space=self.action_space,
            observation_space=self.observation_space,
            contingency=self._contingency(),
            chronics=self._chronics(),
            **self.env,
        )

    def env_factory(self):
        """Validate the scenario once and return a zero-argument env constructor."""
        try:
            grid = load_grid(self._grid_source())
        except (FileNotFoundError, KeyError) as exc:
            raise ConfigError(f"unknown grid {self.grid!r}: {exc}") from exc
        env_config = self.env_config()
        for line in env_config.contingency.lines:
            if not 0 <= line < grid.n_lines:
                raise ConfigError(f"contingency line {line} out of range (grid has {grid.n_lines} lines)")
        try:
            GridEnv(grid, env_config)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

        def make():
            return GridEnv(grid, env_config)

        return make

