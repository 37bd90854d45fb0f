"""Replay-based double deep Q-learning with a low-rank penalty on the batch Q-matrix."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import lowrank
from .env import FrameStack
from .metrics import SummaryRecord
from .nn import NetSpec, OptimizerState, QNetwork, adam_step, read_archive, write_archive

CHECKPOINT_VERSION = 1


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.a)


class ReplayBuffer:
    """FIFO ring buffer with a seeded uniform sampler."""

    def __init__(self, capacity: int, obs_dim: int, seed: int | np.random.Generator | None = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, obs_dim))
        self.s_next = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, s, a: int, r: float, s_next, done: bool):
        i = self.pos
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.done[i] = s, a, r, s_next, done
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    lam: float = 0.0
    batch_size: int = 32
    eps_start: float = 1.0
    eps_end: float = 0.05
    # None anneals over the first 20% of training
    eps_decay_steps: int | None = None
    target_sync: int = 1000
    buffer_capacity: int = 100_000
    total_steps: int = 20_000
    warmup: int = 1000
    train_every: int = 1
    double: bool = True
    regularizer: lowrank.RegularizerSpec = field(default_factory=lowrank.RegularizerSpec)
    lr: float = 1e-4
    lr_decay: float = 0.95
    lr_decay_steps: int = 1000
    frames: int = 4
    # None keeps the default full-size network
    trunk: tuple[int, ...] | None = None
    head_hidden: int = 384
    mean_advantage: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.batch_size <= 0 or self.train_every <= 0 or self.target_sync <= 0:
            raise ValueError("batch_size, train_every and target_sync must be positive")
        if isinstance(self.regularizer, dict):
            self.regularizer = lowrank.RegularizerSpec.from_dict(self.regularizer)
        if self.trunk is not None:
            self.trunk = tuple(int(h) for h in self.trunk)

    @classmethod
    def from_dict(cls, doc: dict) -> TrainerConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown trainer fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk"] = list(self.trunk) if self.trunk is not None else None
        return d

    def net_spec(self, obs_size: int, n_actions: int) -> NetSpec:
        if self.trunk is None:
            return NetSpec.for_observation(
                obs_size, n_actions, frames=self.frames, mean_advantage=self.mean_advantage
            )
        return NetSpec(
            input_dim=self.frames * obs_size,
            trunk=self.trunk,
            head_hidden=self.head_hidden,
            n_actions=n_actions,
            mean_advantage=self.mean_advantage,
        )

    def epsilon(self, step: int) -> float:
        decay = self.eps_decay_steps
        if decay is None:
            decay = max(1, int(0.2 * self.total_steps))
        frac = min(1.0, step / decay) if decay > 0 else 1.0
        return self.eps_start + frac * (self.eps_end - self.eps_start)


# --------------------------------------------------------------------------
# core operations


def select_action(net: QNetwork, obs: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; argmax ties resolve to the lowest index."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if rng.random() < eps:
        return int(rng.integers(net.spec.n_actions))
    q = net.forward(obs, record=False)[0]
    return int(np.argmax(q))


def td_targets(batch: Batch, online: QNetwork, target: QNetwork, gamma: float, double: bool = True) -> np.ndarray:
    q_target = target.forward(batch.s_next, record=False)
    if double:
        best = np.argmax(online.forward(batch.s_next, record=False), axis=1)
    else:
        best = np.argmax(q_target, axis=1)
    bootstrap = q_target[np.arange(len(batch)), best]
    return batch.r + gamma * np.where(batch.done, 0.0, bootstrap)


def dqn_loss(batch: Batch, y: np.ndarray, online: QNetwork) -> tuple[float, np.ndarray]:
    """Plain squared TD error summed over the batch, and its parameter gradient."""
    q = online.forward(batch.s)
    rows = np.arange(len(batch))
    diff = y - q[rows, batch.a]
    dq = np.zeros_like(q)
    dq[rows, batch.a] = -2.0 * diff
    return float(np.sum(diff**2)), online.backward(dq)


@dataclass
class LossParts:
    td: float
    reg: float
    degenerate: bool


def loss_with_lrr(
    batch: Batch,
    y: np.ndarray,
    online: QNetwork,
    lam: float,
    spec: lowrank.RegularizerSpec | None = None,
    parts: list | None = None,
) -> tuple[float, np.ndarray]:
    """TD loss plus ``lam`` times a spectral regularizer of the full batch Q-matrix.

    Targets are constants. The TD part reaches only the taken-action entries;
    the regularizer gradient reaches every entry of the Q-matrix.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    q = online.forward(batch.s)
    rows = np.arange(len(batch))
    diff = y - q[rows, batch.a]
    dq = np.zeros_like(q)
    dq[rows, batch.a] = -2.0 * diff
    td = float(np.sum(diff**2))
    reg, degenerate = 0.0, False
    if lam > 0:
        spec = spec or lowrank.RegularizerSpec()
        dec = lowrank.svd(q)
        reg = lowrank.reg_value(spec, dec)
        g, degenerate = lowrank.reg_grad(spec, q, dec)
        dq += lam * g
    if parts is not None:
        parts.append(LossParts(td, reg, degenerate))
    return td + lam * reg, online.backward(dq)


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    online: QNetwork
    target: QNetwork
    opt: OptimizerState
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def save(self, path):
        meta = {
            "version": CHECKPOINT_VERSION,
            "net": {**asdict(self.online.spec), "trunk": list(self.online.spec.trunk)},
            "optimizer": {
                k: getattr(self.opt, k)
                for k in ("step", "base_lr", "decay_rate", "decay_steps", "beta1", "beta2", "eps")
            },
            "step": self.step,
            "rng_state": self.rng_state,
            "meta": self.meta,
        }
        arrays = {
            "theta": self.online.theta,
            "target_theta": self.target.theta,
            "adam_m": self.opt.m,
            "adam_v": self.opt.v,
        }
        write_archive(path, json.loads(json.dumps(meta)), arrays)

    @classmethod
    def load(cls, path) -> Checkpoint:
        meta, arrays = read_archive(path)
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        net = dict(meta["net"])
        net["trunk"] = tuple(net["trunk"])
        spec = NetSpec(**net)
        return cls(
            online=QNetwork(spec, theta=arrays["theta"]),
            target=QNetwork(spec, theta=arrays["target_theta"]),
            opt=OptimizerState(m=arrays["adam_m"], v=arrays["adam_v"], **meta["optimizer"]),
            step=meta["step"],
            rng_state=meta["rng_state"],
            meta=meta["meta"],
        )


# --------------------------------------------------------------------------
# training and evaluation


Policy = Callable[[np.ndarray], int]


def greedy_policy(net: QNetwork) -> Policy:
    def act(obs):
        return int(np.argmax(net.forward(obs, record=False)[0]))

    return act


def do_nothing_policy(obs) -> int:
    return 0


def _episode_row(env, episode: int, step: int, total_reward: float, length: int) -> dict:
    row = {"episode": episode, "env_step": step}
    summary_fn = getattr(env, "episode_summary", None)
    if summary_fn is not None:
        row.update(asdict(summary_fn()))
    else:
        row.update(steps_survived=length, total_reward=total_reward)
    return row


def train(env_factory: Callable[[], object], config: TrainerConfig, seed: int) -> tuple[Checkpoint, list[dict]]:
    """Run epsilon-greedy data collection with replay updates.

    Returns the final checkpoint and one curve row per finished episode.
    Deterministic for a given seed.
    """
    env = env_factory()
    ss = np.random.SeedSequence(seed)
    init_ss, act_ss, replay_ss, env_ss = ss.spawn(4)
    act_rng = np.random.default_rng(act_ss)
    env_rng = np.random.default_rng(env_ss)

    spec = config.net_spec(env.obs_size, env.n_actions)
    online = QNetwork(spec, seed=init_ss.generate_state(1)[0])
    target = online.copy()
    opt = OptimizerState.for_network(
        online, base_lr=config.lr, decay_rate=config.lr_decay, decay_steps=config.lr_decay_steps
    )
    scale = np.tile(env.obs_scale, config.frames)
    ckpt = Checkpoint(online=online, target=target, opt=opt)
    curves: list[dict] = []
    if config.total_steps <= 0:
        ckpt.rng_state = {"act": act_rng.bit_generator.state, "env": env_rng.bit_generator.state}
        return ckpt, curves

    buffer = ReplayBuffer(
        min(config.buffer_capacity, config.total_steps), spec.input_dim, np.random.default_rng(replay_ss)
    )
    stack = FrameStack(config.frames)
    obs = env.reset(seed=int(env_rng.integers(2**63)))
    s = stack.reset(obs) / scale
    episode, ep_reward, ep_len, losses = 0, 0.0, 0, []

    for step in range(config.total_steps):
        a = select_action(online, s, config.epsilon(step), act_rng)
        obs, r, done, info = env.step(a)
        s_next = stack.push(obs) / scale
        terminal = done and not info.get("truncated", False)
        buffer.add(s, a, r, s_next, terminal)
        s = s_next
        ep_reward += r
        ep_len += 1

        n = step + 1
        if n >= config.warmup and n % config.train_every == 0 and len(buffer) >= config.batch_size:
            batch = buffer.sample(config.batch_size)
            y = td_targets(batch, online, target, config.gamma, config.double)
            loss, grad = loss_with_lrr(batch, y, online, config.lam, config.regularizer)
            adam_step(online, grad, opt)
            losses.append(loss)
        if n % config.target_sync == 0:
            target.theta[:] = online.theta

        if done:
            row = _episode_row(env, episode, n, ep_reward, ep_len)
            row["epsilon"] = config.epsilon(step)
            row["mean_loss"] = float(np.mean(losses)) if losses else float("nan")
            curves.append(row)
            episode, ep_reward, ep_len, losses = episode + 1, 0.0, 0, []
            obs = env.reset(seed=int(env_rng.integers(2**63)))
            s = stack.reset(obs) / scale

    ckpt.step = config.total_steps
    ckpt.rng_state = {
        "act": act_rng.bit_generator.state,
        "env": env_rng.bit_generator.state,
        "replay": buffer.rng.bit_generator.state,
    }
    return ckpt, curves


@dataclass
class EvalReport:
    summaries: list[SummaryRecord]
    mean: dict[str, float]
    std: dict[str, float]
    logs: list = field(default_factory=list, repr=False)


def aggregate(summaries: list[SummaryRecord]) -> tuple[dict[str, float], dict[str, float]]:
    names = SummaryRecord.field_names()
    table = np.array([[float(getattr(s, n)) for n in names] for s in summaries])
    return dict(zip(names, table.mean(axis=0).tolist())), dict(zip(names, table.std(axis=0).tolist()))


def run_episode(env, policy: Policy, seed: int | None, frames: int = 4) -> SummaryRecord:
    scale = np.tile(env.obs_scale, frames)
    stack = FrameStack(frames)
    s = stack.reset(env.reset(seed=seed)) / scale
    done = False
    while not done:
        obs, _, done, _ = env.step(policy(s))
        s = stack.push(obs) / scale
    return env.episode_summary()


def evaluate(
    checkpoint: Checkpoint | QNetwork | Policy | None,
    env_factory: Callable[[], object],
    episodes: int,
    seed: int,
    frames: int = 4,
) -> EvalReport:
    """Greedy roll-outs; ``None`` evaluates the do-nothing policy."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    if checkpoint is None:
        policy = do_nothing_policy
    elif isinstance(checkpoint, Checkpoint):
        policy = greedy_policy(checkpoint.online)
    elif isinstance(checkpoint, QNetwork):
        policy = greedy_policy(checkpoint)
    else:
        policy = checkpoint
    env = env_factory()
    seeds = np.random.default_rng(np.random.SeedSequence(seed)).integers(2**63, size=episodes)
    summaries, logs = [], []
    for ep_seed in seeds:
        summaries.append(run_episode(env, policy, int(ep_seed), frames))
        logs.append(env.state.log)
    mean, std = aggregate(summaries)
    return EvalReport(summaries=summaries, mean=mean, std=std, logs=logs)
