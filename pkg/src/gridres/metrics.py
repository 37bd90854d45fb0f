"""Resilience metrics: load satisfaction, line connectivity, redispatch cost,
recovery duration, and per-episode summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np


class ZeroScheduledDemand(ValueError):
    pass


class InvalidPartition(ValueError):
    pass


@dataclass
class StepRecord:
    d_scheduled: list[float]
    d_actual: list[float]
    p_scheduled: list[float]
    p_actual: list[float]
    line_status: list[int]
    islands: list[list[int]]
    reward: float
    legal: bool = True
    action: int = 0

    @property
    def n_islands(self) -> int:
        return len(self.islands)


@dataclass
class EpisodeLog:
    horizon: int
    load_substation: list[int]
    records: list[StepRecord] = field(default_factory=list)

    @property
    def steps_survived(self) -> int:
        return len(self.records)

    def append(self, record: StepRecord):
        if len(self.records) >= self.horizon:
            raise ValueError("episode log already holds horizon records")
        self.records.append(record)

    def to_jsonl(self, path: str | Path):
        with open(path, "w") as fh:
            header = {"horizon": self.horizon, "load_substation": self.load_substation}
            fh.write(json.dumps({"header": header}) + "\n")
            for rec in self.records:
                fh.write(json.dumps(asdict(rec)) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> EpisodeLog:
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        header = rows[0]["header"]
        log = cls(horizon=header["horizon"], load_substation=header["load_substation"])
        log.records = [StepRecord(**row) for row in rows[1:]]
        return log


def load_satisfaction(record: StepRecord) -> float:
    scheduled = float(np.sum(record.d_scheduled))
    if scheduled <= 0.0:
        raise ZeroScheduledDemand("load satisfaction needs positive scheduled demand")
    return float(np.sum(record.d_actual)) / scheduled


def line_connectivity(record: StepRecord) -> float:
    status = np.asarray(record.line_status)
    return float(status.sum()) / len(status)


def operational_cost(record: StepRecord, c_re: float = 1.0) -> float:
    if c_re < 0:
        raise ValueError("c_re must be non-negative")
    diff = np.abs(np.asarray(record.p_scheduled, float) - np.asarray(record.p_actual, float))
    return c_re * float(diff.sum())


def default_partition(n_substations: int) -> list[list[int]]:
    return [[s] for s in range(n_substations)]


def _fully_served(record: StepRecord, loads: np.ndarray) -> bool:
    d_sc = np.asarray(record.d_scheduled, float)[loads]
    d_ac = np.asarray(record.d_actual, float)[loads]
    return bool(np.all(np.abs(d_sc - d_ac) <= 1e-9 * (1.0 + d_sc)))


def recovery_time(log: EpisodeLog, loads: np.ndarray) -> int:
    """First step (1-based) from which the given loads stay fully served.

    Returns ``horizon + 1`` when the loads are not served at the end of the log
    or the episode ended before the horizon.
    """
    never = log.horizon + 1
    if log.steps_survived < log.horizon:
        # an early end is a blackout, so the subgraph is not recovered
        return never
    tau = never
    for t in range(len(log.records), 0, -1):
        if _fully_served(log.records[t - 1], loads):
            tau = t
        else:
            break
    return tau


def recovery_duration(log: EpisodeLog, partition: list[list[int]], n_substations: int | None = None) -> int:
    if n_substations is None:
        n_substations = max(log.load_substation, default=-1) + 1
        n_substations = max(n_substations, max((max(g) for g in partition if g), default=-1) + 1)
    seen: set[int] = set()
    for g in partition:
        for s in g:
            if s in seen:
                raise InvalidPartition(f"substation {s} appears in more than one subgraph")
            if not 0 <= s < n_substations:
                raise InvalidPartition(f"unknown substation {s}")
            seen.add(s)
    if len(seen) != n_substations:
        raise InvalidPartition("partition does not cover every substation")

    load_sub = np.asarray(log.load_substation)
    total = 0
    for g in partition:
        loads = np.flatnonzero(np.isin(load_sub, g))
        total += min(recovery_time(log, loads), log.horizon)
    return total


@dataclass
class SummaryRecord:
    steps_survived: int
    cost: float
    islands: float
    unsupplied_load: float
    broken_lines: float
    total_reward: float

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def episode_summary(log: EpisodeLog, c_re: float = 1.0) -> SummaryRecord:
    if not log.records:
        raise ValueError("cannot summarize an empty episode log")
    n = len(log.records)
    cost = sum(operational_cost(r, c_re) for r in log.records) / n
    islands = sum(r.n_islands for r in log.records) / n
    unsupplied = sum(1.0 - load_satisfaction(r) for r in log.records) / n
    n_lines = len(log.records[0].line_status)
    broken = sum(n_lines - int(np.sum(r.line_status)) for r in log.records) / n
    reward = sum(r.reward for r in log.records)
    return SummaryRecord(
        steps_survived=n,
        cost=cost,
        islands=islands,
        unsupplied_load=unsupplied,
        broken_lines=broken,
        total_reward=reward,
    )


def write_summaries_csv(path: str | Path, summaries: list[SummaryRecord], extra: list[dict] | None = None):
    names = SummaryRecord.field_names()
    extra = extra or [{} for _ in summaries]
    extra_keys = list(extra[0].keys()) if extra else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", *extra_keys, *names])
        for i, (s, e) in enumerate(zip(summaries, extra)):
            writer.writerow([i, *(e[k] for k in extra_keys), *(_fmt(getattr(s, n)) for n in names)])


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))
