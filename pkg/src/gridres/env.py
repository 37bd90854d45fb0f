"""MDP wrapper around the grid simulator.

The environment keeps stepping after the grid islands; an episode ends only at
the horizon or when no load at all is served.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .grid import (
    BUSBAR_1,
    BUSBAR_2,
    DISCONNECTED,
    OBJ_LINE_EX,
    OBJ_LINE_OR,
    Grid,
    PowerFlowResult,
    apply_overflow_protection,
    commit_result,
    solve_dc_power_flow,
)


class SteppedAfterDone(RuntimeError):
    pass


class InvalidLineId(ValueError):
    pass


class ActionSpaceKind(str, enum.Enum):
    TOPOLOGY = "topology"
    POWERLINE_SET = "powerline_set"
    TOPOLOGY_SET = "topology_set"


class ObservationSpaceKind(str, enum.Enum):
    COMPLETE = "complete"
    ESSENTIAL = "essential"


DO_NOTHING = "do_nothing"
SET_LINE_STATUS = "set_line_status"
CHANGE_LINE_STATUS = "change_line_status"
SET_BUS = "set_bus"
CHANGE_BUS = "change_bus"

PERMITTED_KINDS = {
    ActionSpaceKind.POWERLINE_SET: {DO_NOTHING, SET_LINE_STATUS},
    ActionSpaceKind.TOPOLOGY_SET: {DO_NOTHING, SET_LINE_STATUS, SET_BUS},
    ActionSpaceKind.TOPOLOGY: {DO_NOTHING, SET_LINE_STATUS, CHANGE_LINE_STATUS, SET_BUS, CHANGE_BUS},
}


@dataclass(frozen=True)
class Action:
    kind: str = DO_NOTHING
    target: int = -1
    value: int = 0

    def __str__(self):
        if self.kind == DO_NOTHING:
            return "do_nothing"
        if self.kind in (CHANGE_LINE_STATUS, CHANGE_BUS):
            return f"{self.kind}({self.target})"
        return f"{self.kind}({self.target}, {self.value:+d})"


@dataclass
class ActionCatalog:
    space_kind: ActionSpaceKind
    actions: list[Action]

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i: int) -> Action:
        return self.actions[i]

    def kinds(self) -> set[str]:
        return {a.kind for a in self.actions}


def enumerate_actions(grid: Grid, space_kind: ActionSpaceKind | str) -> ActionCatalog:
    space_kind = ActionSpaceKind(space_kind)
    permitted = PERMITTED_KINDS[space_kind]
    actions = [Action()]
    for l in range(grid.n_lines):
        actions.append(Action(SET_LINE_STATUS, l, -1))
        actions.append(Action(SET_LINE_STATUS, l, +1))
        if CHANGE_LINE_STATUS in permitted:
            actions.append(Action(CHANGE_LINE_STATUS, l))
    if SET_BUS in permitted:
        for obj in range(grid.n_topo):
            actions.append(Action(SET_BUS, obj, BUSBAR_1))
            actions.append(Action(SET_BUS, obj, BUSBAR_2))
            actions.append(Action(SET_BUS, obj, DISCONNECTED))
            if CHANGE_BUS in permitted:
                actions.append(Action(CHANGE_BUS, obj))
    return ActionCatalog(space_kind=space_kind, actions=actions)


# --------------------------------------------------------------------------
# chronics and contingencies


@dataclass
class Chronics:
    load_p: np.ndarray  # (H, n_loads)
    gen_p: np.ndarray  # (H, n_gens)

    def __post_init__(self):
        self.load_p = np.atleast_2d(np.asarray(self.load_p, dtype=float))
        self.gen_p = np.atleast_2d(np.asarray(self.gen_p, dtype=float))
        if self.load_p.shape[0] != self.gen_p.shape[0]:
            raise ValueError("load and generator schedules have different lengths")
        if (self.load_p < 0).any() or (self.gen_p < 0).any():
            raise ValueError("chronics values must be non-negative")

    @property
    def horizon(self) -> int:
        return self.load_p.shape[0]

    def check_grid(self, grid: Grid):
        if self.load_p.shape[1] != len(grid.loads) or self.gen_p.shape[1] != len(grid.generators):
            raise ValueError(
                f"chronics have {self.load_p.shape[1]} loads / {self.gen_p.shape[1]} generators, "
                f"grid has {len(grid.loads)} / {len(grid.generators)}"
            )

    def to_csv(self, path: str | Path):
        n_load, n_gen = self.load_p.shape[1], self.gen_p.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"load_{j}" for j in range(n_load)] + [f"gen_{k}" for k in range(n_gen)])
            for row_l, row_g in zip(self.load_p, self.gen_p):
                writer.writerow([repr(float(v)) for v in row_l] + [repr(float(v)) for v in row_g])

    @classmethod
    def from_csv(cls, path: str | Path) -> Chronics:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        load_cols = [i for i, h in enumerate(header) if h.startswith("load_")]
        gen_cols = [i for i, h in enumerate(header) if h.startswith("gen_")]
        if not rows:
            raise ValueError(f"{path}: no chronics rows")
        data = np.asarray(rows)
        return cls(load_p=data[:, load_cols], gen_p=data[:, gen_cols])


@dataclass
class ChronicsSpec:
    """Synthetic daily profile: sinusoid around ``level`` plus seeded noise."""

    horizon: int = 100
    level: float = 1.0
    amplitude: float = 0.2
    period: int = 288
    noise: float = 0.02
    # None draws the starting phase from the seed
    start: int | None = None
    # uniform offset in [-start_jitter, start_jitter] around a fixed start
    start_jitter: int = 0

    def generate(self, grid: Grid, seed: int | None) -> Chronics:
        rng = np.random.default_rng(seed)
        if self.start is None:
            start = int(rng.integers(self.period))
        else:
            start = self.start + int(rng.integers(-self.start_jitter, self.start_jitter + 1))
        t = np.arange(self.horizon) + start
        profile = self.level * (1.0 + self.amplitude * np.sin(2 * np.pi * t / self.period))
        nominal = np.array([load.p_nominal for load in grid.loads])
        noise = 1.0 + self.noise * rng.standard_normal((self.horizon, len(nominal)))
        load_p = np.clip(profile[:, None] * nominal[None, :] * noise, 0.0, None)
        p_max = np.array([gen.p_max for gen in grid.generators])
        share = p_max / p_max.sum()
        gen_noise = 1.0 + self.noise * rng.standard_normal((self.horizon, len(p_max)))
        gen_p = np.clip(load_p.sum(axis=1)[:, None] * share[None, :] * gen_noise, 0.0, p_max)
        return Chronics(load_p=load_p, gen_p=gen_p)


@dataclass(frozen=True)
class ContingencyEvent:
    lines: tuple[int, ...] = ()

    @classmethod
    def from_json(cls, path: str | Path) -> ContingencyEvent:
        return cls(tuple(int(l) for l in json.loads(Path(path).read_text())))


# --------------------------------------------------------------------------
# state transitions


@dataclass
class EnvState:
    grid: Grid
    chronics: Chronics
    t: int = 0
    result: PowerFlowResult | None = None
    done: bool = False
    log: metrics.EpisodeLog | None = None


def _line_of_object(grid: Grid, obj: int) -> int | None:
    kind, idx = grid.objects[obj]
    return idx if kind in (OBJ_LINE_OR, OBJ_LINE_EX) else None


def apply_action(state: EnvState, action: Action, cooldown: int = 3) -> bool:
    """Mutate the topology; returns False (and leaves the grid untouched) for illegal actions."""
    grid = state.grid
    kind = action.kind
    if kind == DO_NOTHING:
        return True

    if kind in (SET_LINE_STATUS, CHANGE_LINE_STATUS):
        l = action.target
        if not 0 <= l < grid.n_lines:
            return False
        if kind == SET_LINE_STATUS and action.value not in (-1, 0, 1):
            return False
        line = grid.lines[l]
        if line.cooldown_remaining > 0:
            return False
        if kind == CHANGE_LINE_STATUS:
            want = not line.status
        elif action.value == 0:
            return True
        else:
            want = action.value == 1
        if want == line.status:
            return True
        if want:
            if line.bus_disconnected:
                return False
            grid.connect_line(l, BUSBAR_1, BUSBAR_1, cooldown=cooldown)
        else:
            grid.disconnect_line(l, cooldown=cooldown)
        return True

    if kind in (SET_BUS, CHANGE_BUS):
        obj = action.target
        if not 0 <= obj < grid.n_topo:
            return False
        if kind == SET_BUS and action.value not in (-1, 0, 1, 2):
            return False
        current = int(grid.topo_vect[obj])
        if kind == CHANGE_BUS:
            if current == DISCONNECTED:
                return False
            target = BUSBAR_2 if current == BUSBAR_1 else BUSBAR_1
        elif action.value == 0:
            return True
        else:
            target = action.value

        l = _line_of_object(grid, obj)
        if l is None:
            grid.topo_vect[obj] = target
            return True
        line = grid.lines[l]
        if line.cooldown_remaining > 0:
            return False
        if target == current:
            return True
        if target == DISCONNECTED:
            grid.disconnect_line(l, cooldown=cooldown)
            line.bus_disconnected = True
        elif line.status:
            grid.topo_vect[obj] = target
            line.cooldown_remaining = max(line.cooldown_remaining, cooldown)
        else:
            is_origin = grid.objects[obj][0] == OBJ_LINE_OR
            grid.connect_line(
                l,
                target if is_origin else BUSBAR_1,
                BUSBAR_1 if is_origin else target,
                cooldown=cooldown,
            )
        return True

    return False


def inject_contingency(state: EnvState, event: ContingencyEvent, cooldown: int = 3) -> EnvState:
    if state.t != 0:
        raise ValueError("contingencies are injected before the first step")
    for l in event.lines:
        if not 0 <= l < state.grid.n_lines:
            raise InvalidLineId(f"line {l} does not exist (grid has {state.grid.n_lines} lines)")
    for l in event.lines:
        state.grid.disconnect_line(l, cooldown=cooldown)
    return state


def reward(result: PowerFlowResult, blackout: bool) -> float:
    """Mean squared-margin over lines scaled by load satisfaction; -1 on blackout."""
    if blackout:
        return -1.0
    margin = np.maximum(0.0, 1.0 - result.line_loading**2)
    scheduled = result.demand_scheduled.sum()
    ls = result.served.sum() / scheduled if scheduled > 0 else 1.0
    return float(margin.mean() * ls)


def observation_size(grid: Grid, space_kind: ObservationSpaceKind | str) -> int:
    g, n, e = len(grid.generators), len(grid.loads), grid.n_lines
    if ObservationSpaceKind(space_kind) == ObservationSpaceKind.ESSENTIAL:
        # gen_p, load_p, then p_or, a_or, p_ex, a_ex, rho, status, overflow per line
        return g + n + 7 * e + grid.n_topo
    # reactive fields add gen_q, load_q, q_or, q_ex
    return 2 * g + 2 * n + 9 * e + grid.n_topo


def observe(state: EnvState, space_kind: ObservationSpaceKind | str) -> np.ndarray:
    grid, res = state.grid, state.result
    if res is None:
        raise ValueError("no power-flow result to observe")
    status = grid.line_status()
    p_or = np.where(status, res.line_flow_p_or, 0.0)
    p_ex = np.where(status, res.line_flow_p_ex, 0.0)
    rho = np.where(status, res.line_loading, 0.0)
    overflow = np.array([line.timestep_overflow for line in grid.lines], dtype=float)
    zeros = np.zeros(grid.n_lines)
    if ObservationSpaceKind(space_kind) == ObservationSpaceKind.ESSENTIAL:
        parts = [res.dispatched, res.served, p_or, np.abs(p_or), p_ex, np.abs(p_ex)]
    else:
        gen_q = np.array([gen.q_scheduled for gen in grid.generators])
        load_q = np.array([load.q_scheduled for load in grid.loads])
        parts = [
            res.dispatched, gen_q, res.served, load_q,
            p_or, np.abs(p_or), zeros, p_ex, np.abs(p_ex), zeros,
        ]
    parts += [rho, status.astype(float), overflow, grid.topo_vect.astype(float)]
    return np.concatenate(parts).astype(float)


def observation_scale(grid: Grid, space_kind: ObservationSpaceKind | str, max_overflow_steps: int = 3) -> np.ndarray:
    """Per-feature divisors that bring raw observations to order one."""
    p_max = np.array([max(gen.p_max, 1.0) for gen in grid.generators])
    p_nom = np.array([max(load.p_nominal, 1.0) for load in grid.loads])
    limits = np.array([line.thermal_limit for line in grid.lines])
    ones = np.ones(grid.n_lines)
    if ObservationSpaceKind(space_kind) == ObservationSpaceKind.ESSENTIAL:
        parts = [p_max, p_nom, limits, limits, limits, limits]
    else:
        gen_q = np.array([max(abs(gen.q_scheduled), 1.0) for gen in grid.generators])
        load_q = np.array([max(abs(load.q_scheduled), 1.0) for load in grid.loads])
        parts = [p_max, gen_q, p_nom, load_q, limits, limits, ones, limits, limits, ones]
    parts += [ones, ones, ones * max(max_overflow_steps, 1), np.ones(grid.n_topo)]
    return np.concatenate(parts)


class FrameStack:
    """Concatenates the last ``n`` observations; the first frame is repeated on reset."""

    def __init__(self, n: int = 4):
        self.n = n
        self.frames: list[np.ndarray] = []

    def reset(self, obs: np.ndarray) -> np.ndarray:
        self.frames = [obs] * self.n
        return np.concatenate(self.frames)

    def push(self, obs: np.ndarray) -> np.ndarray:
        self.frames = self.frames[1:] + [obs]
        return np.concatenate(self.frames)


# --------------------------------------------------------------------------
# environment


@dataclass
class EnvConfig:
    action_space: ActionSpaceKind = ActionSpaceKind.POWERLINE_SET
    observation_space: ObservationSpaceKind = ObservationSpaceKind.ESSENTIAL
    cooldown: int = 3
    max_overflow_steps: int = 3
    c_re: float = 1.0
    contingency: ContingencyEvent = field(default_factory=ContingencyEvent)
    chronics: ChronicsSpec | Chronics = field(default_factory=ChronicsSpec)

    def __post_init__(self):
        self.action_space = ActionSpaceKind(self.action_space)
        self.observation_space = ObservationSpaceKind(self.observation_space)


class GridEnv:
    def __init__(self, grid: Grid, config: EnvConfig | None = None):
        self.template = grid.copy()
        self.config = config or EnvConfig()
        self.catalog = enumerate_actions(self.template, self.config.action_space)
        self.obs_size = observation_size(self.template, self.config.observation_space)
        self.obs_scale = observation_scale(
            self.template, self.config.observation_space, self.config.max_overflow_steps
        )
        if isinstance(self.config.chronics, Chronics):
            self.config.chronics.check_grid(self.template)
        self.state: EnvState | None = None

    @property
    def n_actions(self) -> int:
        return len(self.catalog)

    @property
    def horizon(self) -> int:
        chron = self.config.chronics
        return chron.horizon

    def _chronics(self, seed: int | None) -> Chronics:
        chron = self.config.chronics
        if isinstance(chron, Chronics):
            return chron
        return chron.generate(self.template, seed)

    def _solve(self) -> PowerFlowResult:
        result = solve_dc_power_flow(self.state.grid)
        commit_result(self.state.grid, result)
        return result

    def reset(self, seed: int | None = None) -> np.ndarray:
        grid = self.template.copy()
        chronics = self._chronics(seed)
        grid.set_injections(chronics.load_p[0], chronics.gen_p[0])
        self.state = EnvState(
            grid=grid,
            chronics=chronics,
            log=metrics.EpisodeLog(
                horizon=chronics.horizon,
                load_substation=[load.substation for load in grid.loads],
            ),
        )
        inject_contingency(self.state, self.config.contingency, self.config.cooldown)
        self.state.result = self._solve()
        return self.observe()

    def observe(self, space_kind: ObservationSpaceKind | str | None = None) -> np.ndarray:
        return observe(self.state, space_kind or self.config.observation_space)

    def episode_summary(self) -> metrics.SummaryRecord:
        return metrics.episode_summary(self.state.log, self.config.c_re)

    def step(self, action: Action | int):
        state = self.state
        if state is None or state.done:
            raise SteppedAfterDone("episode is over; call reset()")
        if not isinstance(action, Action):
            index = int(action)
            action = self.catalog[index] if 0 <= index < len(self.catalog) else Action("invalid")
            action_index = index
        else:
            action_index = -1
        cfg = self.config

        legal = apply_action(state, action, cfg.cooldown)
        state.grid.set_injections(state.chronics.load_p[state.t], state.chronics.gen_p[state.t])
        result = self._solve()
        tripped = apply_overflow_protection(state.grid, result, cfg.max_overflow_steps, cfg.cooldown)
        if tripped:
            result = self._solve()
        for line in state.grid.lines:
            line.cooldown_remaining = max(0, line.cooldown_remaining - 1)
        state.result = result

        blackout = result.total_blackout
        r = reward(result, blackout)
        state.t += 1
        record = metrics.StepRecord(
            d_scheduled=result.demand_scheduled.tolist(),
            d_actual=result.served.tolist(),
            p_scheduled=result.generation_scheduled.tolist(),
            p_actual=result.dispatched.tolist(),
            line_status=state.grid.line_status().astype(int).tolist(),
            islands=[list(map(int, isl)) for isl in result.islands],
            reward=r,
            legal=legal,
            action=action_index,
        )
        state.log.append(record)
        state.done = state.t >= state.chronics.horizon or blackout
        info = {
            "legal": legal,
            "islands": result.n_islands,
            "LS": metrics.load_satisfaction(record),
            "LC": metrics.line_connectivity(record),
            "OC": metrics.operational_cost(record, cfg.c_re),
            "tripped": tripped,
            "blackout": blackout,
            "truncated": state.done and not blackout,
            "t": state.t,
        }
        return self.observe(), r, state.done, info
