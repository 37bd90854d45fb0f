"""Dual-busbar grid model, island detection and DC power flow.

The solver keeps working when the network splits: every island is solved on its
own, islands without generation are blacked out and islands short of capacity
shed load proportionally.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

BUSBAR_1 = 1
BUSBAR_2 = 2
DISCONNECTED = -1

OBJ_LOAD = "load"
OBJ_GEN = "gen"
OBJ_LINE_OR = "line_or"
OBJ_LINE_EX = "line_ex"


class InvalidGrid(ValueError):
    pass


class SingularSystem(RuntimeError):
    """Reduced Laplacian of an island could not be factorized."""


@dataclass
class Substation:
    name: str = ""


@dataclass
class Powerline:
    from_substation: int
    to_substation: int
    susceptance: float
    thermal_limit: float
    status: bool = True
    timestep_overflow: int = 0
    cooldown_remaining: int = 0
    # set when an end was dropped through set_bus(-1); blocks plain reconnection
    bus_disconnected: bool = False


@dataclass
class Generator:
    substation: int
    p_max: float
    p_scheduled: float = 0.0
    p_actual: float = 0.0
    q_scheduled: float = 0.0


@dataclass
class Load:
    substation: int
    d_scheduled: float = 0.0
    d_actual: float = 0.0
    q_scheduled: float = 0.0
    p_nominal: float = 0.0


@dataclass
class Grid:
    """Static description plus mutable topology state.

    ``topo_vect`` holds one entry per object (load, generator, line origin,
    line extremity). Objects are ordered substation by substation; inside a
    substation loads come first, then generators, line origins and line
    extremities, each group by object index.
    """

    substations: list[Substation]
    lines: list[Powerline]
    generators: list[Generator]
    loads: list[Load]
    base_mva: float = 100.0
    name: str = ""
    topo_vect: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._validate()
        self._index_objects()
        if self.topo_vect is None:
            self.topo_vect = np.full(self.n_topo, BUSBAR_1, dtype=np.int64)
            for l, line in enumerate(self.lines):
                if not line.status:
                    self.topo_vect[self.line_or_pos[l]] = DISCONNECTED
                    self.topo_vect[self.line_ex_pos[l]] = DISCONNECTED
        else:
            self.topo_vect = np.asarray(self.topo_vect, dtype=np.int64).copy()
            if self.topo_vect.shape != (self.n_topo,):
                raise InvalidGrid(f"topo_vect must have length {self.n_topo}")

    def _validate(self):
        n_sub = len(self.substations)
        if n_sub == 0:
            raise InvalidGrid("grid has no substations")
        for l, line in enumerate(self.lines):
            for s in (line.from_substation, line.to_substation):
                if not 0 <= s < n_sub:
                    raise InvalidGrid(f"line {l} references unknown substation {s}")
            if line.from_substation == line.to_substation:
                raise InvalidGrid(f"line {l} starts and ends at substation {line.from_substation}")
            if not line.susceptance > 0:
                raise InvalidGrid(f"line {l} susceptance must be positive")
            if not line.thermal_limit > 0:
                raise InvalidGrid(f"line {l} thermal_limit must be positive")
        for k, gen in enumerate(self.generators):
            if not 0 <= gen.substation < n_sub:
                raise InvalidGrid(f"generator {k} references unknown substation {gen.substation}")
            if gen.p_max < 0:
                raise InvalidGrid(f"generator {k} has negative p_max")
        for j, load in enumerate(self.loads):
            if not 0 <= load.substation < n_sub:
                raise InvalidGrid(f"load {j} references unknown substation {load.substation}")

    def _index_objects(self):
        n_sub = len(self.substations)
        per_sub: list[list[tuple[str, int]]] = [[] for _ in range(n_sub)]
        for j, load in enumerate(self.loads):
            per_sub[load.substation].append((OBJ_LOAD, j))
        for k, gen in enumerate(self.generators):
            per_sub[gen.substation].append((OBJ_GEN, k))
        for l, line in enumerate(self.lines):
            per_sub[line.from_substation].append((OBJ_LINE_OR, l))
        for l, line in enumerate(self.lines):
            per_sub[line.to_substation].append((OBJ_LINE_EX, l))

        self.load_pos = np.zeros(len(self.loads), dtype=np.int64)
        self.gen_pos = np.zeros(len(self.generators), dtype=np.int64)
        self.line_or_pos = np.zeros(len(self.lines), dtype=np.int64)
        self.line_ex_pos = np.zeros(len(self.lines), dtype=np.int64)
        targets = {
            OBJ_LOAD: self.load_pos,
            OBJ_GEN: self.gen_pos,
            OBJ_LINE_OR: self.line_or_pos,
            OBJ_LINE_EX: self.line_ex_pos,
        }
        self.objects: list[tuple[str, int]] = []
        self.obj_substation = []
        for s, objs in enumerate(per_sub):
            for kind, idx in objs:
                targets[kind][idx] = len(self.objects)
                self.objects.append((kind, idx))
                self.obj_substation.append(s)
        self.obj_substation = np.asarray(self.obj_substation, dtype=np.int64)

    @property
    def n_topo(self) -> int:
        return 2 * len(self.lines) + len(self.generators) + len(self.loads)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def line_status(self) -> np.ndarray:
        return np.array([line.status for line in self.lines], dtype=bool)

    def copy(self) -> Grid:
        return copy.deepcopy(self)

    def disconnect_line(self, l: int, cooldown: int = 0):
        line = self.lines[l]
        line.status = False
        line.timestep_overflow = 0
        line.cooldown_remaining = max(line.cooldown_remaining, cooldown)
        self.topo_vect[self.line_or_pos[l]] = DISCONNECTED
        self.topo_vect[self.line_ex_pos[l]] = DISCONNECTED

    def connect_line(self, l: int, bus_or: int = BUSBAR_1, bus_ex: int = BUSBAR_1, cooldown: int = 0):
        line = self.lines[l]
        line.status = True
        line.bus_disconnected = False
        line.cooldown_remaining = max(line.cooldown_remaining, cooldown)
        self.topo_vect[self.line_or_pos[l]] = bus_or
        self.topo_vect[self.line_ex_pos[l]] = bus_ex

    def set_injections(self, load_p, gen_p):
        for load, d in zip(self.loads, load_p):
            load.d_scheduled = float(d)
        for gen, p in zip(self.generators, gen_p):
            gen.p_scheduled = float(p)

    def check_invariants(self):
        if not np.isin(self.topo_vect, (DISCONNECTED, BUSBAR_1, BUSBAR_2)).all():
            raise InvalidGrid("topo_vect entries must be -1, 1 or 2")
        for l, line in enumerate(self.lines):
            ends = self.topo_vect[[self.line_or_pos[l], self.line_ex_pos[l]]]
            if line.status and (ends == DISCONNECTED).any():
                raise InvalidGrid(f"connected line {l} has a disconnected end")
            if not line.status and (ends != DISCONNECTED).any():
                raise InvalidGrid(f"disconnected line {l} has a connected end")
            if line.cooldown_remaining < 0:
                raise InvalidGrid(f"line {l} has negative cooldown")


def grid_from_dict(doc: dict) -> Grid:
    try:
        substations = [
            Substation(name=str(s.get("name", i)) if isinstance(s, dict) else str(s))
            for i, s in enumerate(doc["substations"])
        ]
        lines = [
            Powerline(
                from_substation=int(d["from"]),
                to_substation=int(d["to"]),
                susceptance=float(d["susceptance"]),
                thermal_limit=float(d["thermal_limit"]),
            )
            for d in doc["lines"]
        ]
        generators = [
            Generator(
                substation=int(d["substation"]),
                p_max=float(d["p_max"]),
                q_scheduled=float(d.get("q", 0.0)),
            )
            for d in doc["generators"]
        ]
        loads = [
            Load(
                substation=int(d["substation"]),
                p_nominal=float(d.get("p", 0.0)),
                q_scheduled=float(d.get("q", 0.0)),
            )
            for d in doc["loads"]
        ]
    except (KeyError, TypeError) as exc:
        raise InvalidGrid(f"malformed grid description: {exc!r}") from exc
    return Grid(
        substations=substations,
        lines=lines,
        generators=generators,
        loads=loads,
        base_mva=float(doc.get("base_mva", 100.0)),
        name=str(doc.get("name", "")),
    )


def load_grid(name_or_path: str | Path) -> Grid:
    """Load a bundled fixture ("case5", "case14") or a grid JSON file."""
    path = Path(name_or_path)
    if path.suffix != ".json" and not path.exists():
        text = resources.files("gridres.data").joinpath(f"{name_or_path}.json").read_text()
    else:
        text = path.read_text()
    return grid_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# electrical nodes and islands


@dataclass(frozen=True)
class NodeMap:
    """Dense electrical-node numbering of the occupied (substation, busbar) pairs."""

    node_of_object: np.ndarray  # -1 for disconnected objects
    node_keys: tuple[tuple[int, int], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.node_keys)


def build_electrical_nodes(grid: Grid) -> NodeMap:
    keys = sorted(
        {
            (int(grid.obj_substation[i]), int(bus))
            for i, bus in enumerate(grid.topo_vect)
            if bus != DISCONNECTED
        }
    )
    index = {key: n for n, key in enumerate(keys)}
    node_of_object = np.full(grid.n_topo, -1, dtype=np.int64)
    for i, bus in enumerate(grid.topo_vect):
        if bus != DISCONNECTED:
            node_of_object[i] = index[(int(grid.obj_substation[i]), int(bus))]
    return NodeMap(node_of_object=node_of_object, node_keys=tuple(keys))


class DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def line_endpoints(grid: Grid, nodes: NodeMap) -> list[tuple[int, int, int]]:
    """(line, node_or, node_ex) for every connected line."""
    out = []
    for l, line in enumerate(grid.lines):
        if line.status:
            out.append(
                (
                    l,
                    int(nodes.node_of_object[grid.line_or_pos[l]]),
                    int(nodes.node_of_object[grid.line_ex_pos[l]]),
                )
            )
    return out


def find_islands(nodes: NodeMap, grid: Grid) -> list[list[int]]:
    """Connected components of the node graph, sorted members, ordered by smallest member."""
    dsu = DisjointSet(nodes.n_nodes)
    for _, a, b in line_endpoints(grid, nodes):
        dsu.union(a, b)
    groups: dict[int, list[int]] = {}
    for n in range(nodes.n_nodes):
        groups.setdefault(dsu.find(n), []).append(n)
    return sorted(groups.values(), key=lambda members: members[0])


# --------------------------------------------------------------------------
# DC power flow


@dataclass
class PowerFlowResult:
    node_angles: np.ndarray
    line_flow_p_or: np.ndarray
    line_flow_p_ex: np.ndarray
    line_loading: np.ndarray
    islands: list[list[int]]
    served: np.ndarray
    dispatched: np.ndarray
    island_blackout: list[bool]
    slack_nodes: list[int]
    demand_scheduled: np.ndarray
    generation_scheduled: np.ndarray

    @property
    def n_islands(self) -> int:
        return len(self.islands)

    @property
    def total_blackout(self) -> bool:
        return bool(np.all(self.served == 0.0))


def _redispatch(p_sched: np.ndarray, p_max: np.ndarray, demand: float) -> np.ndarray:
    p = np.clip(p_sched, 0.0, p_max)
    delta = demand - p.sum()
    if delta > 0:
        headroom = p_max - p
        return p + delta * headroom / headroom.sum()
    if delta < 0:
        return p + delta * p / p.sum()
    return p


def solve_dc_power_flow(
    grid: Grid, nodes: NodeMap | None = None, islands: list[list[int]] | None = None
) -> PowerFlowResult:
    if nodes is None:
        nodes = build_electrical_nodes(grid)
    if islands is None:
        islands = find_islands(nodes, grid)

    n_nodes = nodes.n_nodes
    n_lines = grid.n_lines
    load_node = nodes.node_of_object[grid.load_pos] if grid.loads else np.zeros(0, dtype=np.int64)
    gen_node = nodes.node_of_object[grid.gen_pos] if grid.generators else np.zeros(0, dtype=np.int64)
    d_sched = np.array([load.d_scheduled for load in grid.loads], dtype=float)
    p_sched = np.array([gen.p_scheduled for gen in grid.generators], dtype=float)
    p_max = np.array([gen.p_max for gen in grid.generators], dtype=float)

    island_of = np.full(n_nodes, -1, dtype=np.int64)
    for i, members in enumerate(islands):
        island_of[members] = i

    served = np.zeros(len(grid.loads))
    dispatched = np.zeros(len(grid.generators))
    angles = np.zeros(n_nodes)
    blackout = []
    slacks = []
    injection = np.zeros(n_nodes)
    edges = line_endpoints(grid, nodes)

    for i, members in enumerate(islands):
        loads_in = np.flatnonzero((load_node >= 0) & (island_of[np.maximum(load_node, 0)] == i))
        gens_in = np.flatnonzero((gen_node >= 0) & (island_of[np.maximum(gen_node, 0)] == i))
        capacity = p_max[gens_in].sum()
        demand = d_sched[loads_in].sum()
        if capacity <= 0.0:
            blackout.append(bool(len(loads_in)))
            slacks.append(members[0])
            continue
        blackout.append(False)
        if demand > capacity:
            served[loads_in] = d_sched[loads_in] * (capacity / demand)
            dispatched[gens_in] = p_max[gens_in]
        else:
            served[loads_in] = d_sched[loads_in]
            dispatched[gens_in] = _redispatch(p_sched[gens_in], p_max[gens_in], demand)

        # slack: generator node with the largest hosted p_max, lowest index on ties
        hosted = {}
        for k in gens_in:
            hosted[int(gen_node[k])] = hosted.get(int(gen_node[k]), 0.0) + p_max[k]
        slack = min(hosted, key=lambda n: (-hosted[n], n))
        slacks.append(slack)

    np.add.at(injection, gen_node[gen_node >= 0], dispatched[gen_node >= 0])
    np.subtract.at(injection, load_node[load_node >= 0], served[load_node >= 0])
    injection /= grid.base_mva

    b_of_line = np.array([line.susceptance for line in grid.lines], dtype=float)
    for i, members in enumerate(islands):
        if len(members) < 2:
            continue
        local = {n: idx for idx, n in enumerate(members)}
        lap = np.zeros((len(members), len(members)))
        for l, a, b in edges:
            if island_of[a] != i:
                continue
            ia, ib = local[a], local[b]
            lap[ia, ia] += b_of_line[l]
            lap[ib, ib] += b_of_line[l]
            lap[ia, ib] -= b_of_line[l]
            lap[ib, ia] -= b_of_line[l]
        keep = [idx for idx, n in enumerate(members) if n != slacks[i]]
        reduced = lap[np.ix_(keep, keep)]
        rhs = injection[[members[idx] for idx in keep]]
        try:
            chol = np.linalg.cholesky(reduced)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"island {i} reduced Laplacian is singular") from exc
        theta = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        angles[[members[idx] for idx in keep]] = theta

    p_or = np.zeros(n_lines)
    for l, a, b in edges:
        p_or[l] = b_of_line[l] * (angles[a] - angles[b]) * grid.base_mva
    p_ex = -p_or
    limits = np.array([line.thermal_limit for line in grid.lines], dtype=float)
    rho = np.abs(p_or) / limits

    return PowerFlowResult(
        node_angles=angles,
        line_flow_p_or=p_or,
        line_flow_p_ex=p_ex,
        line_loading=rho,
        islands=islands,
        served=served,
        dispatched=dispatched,
        island_blackout=blackout,
        slack_nodes=slacks,
        demand_scheduled=d_sched,
        generation_scheduled=p_sched,
    )


def commit_result(grid: Grid, result: PowerFlowResult):
    """Copy served demand and dispatched generation back onto the grid objects."""
    for load, d in zip(grid.loads, result.served):
        load.d_actual = float(d)
    for gen, p in zip(grid.generators, result.dispatched):
        gen.p_actual = float(p)


def apply_overflow_protection(
    grid: Grid, result: PowerFlowResult, max_overflow_steps: int = 3, cooldown: int = 3
) -> list[int]:
    tripped = []
    for l, line in enumerate(grid.lines):
        if not line.status:
            line.timestep_overflow = 0
            continue
        if result.line_loading[l] > 1.0:
            line.timestep_overflow += 1
            if line.timestep_overflow >= max_overflow_steps:
                grid.disconnect_line(l, cooldown=cooldown)
                tripped.append(l)
        else:
            line.timestep_overflow = 0
    return tripped
