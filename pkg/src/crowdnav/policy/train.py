"""Grid policy controller and REINFORCE training in the replay simulator."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..planner import chebyshev
from ..simulator import Controller, CrowdSimulator, Episode, EpisodeResult, Observation
from .checkpoint import Checkpoint
from .encoding import AgentObservation, action_mask, apply_action, encode_joint_state
from .network import PolicyNetwork
from .rewards import RewardSpec, discounted_returns, reward

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("episode", "return", "steps", "reached_goal", "SR", "SP", "MRP")


def select_action(dist: np.ndarray, mode: str = "greedy", rng: np.random.Generator | None = None) -> int:
    """Greedy argmax (first index wins ties) or a seeded sample."""
    if mode == "greedy":
        return int(np.argmax(dist))
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling needs a random generator")
        return int(rng.choice(len(dist), p=dist))
    raise ValueError(f"unknown selection mode {mode!r}")


class PolicyController(Controller):
    """Drives the robot with a :class:`PolicyNetwork`; hidden state lives for one episode."""

    def __init__(self, net: PolicyNetwork, mode: str = "greedy", robot_radius: float = 15.0,
                 ped_radius: float = 15.0, record: bool = False, name: str = "policy"):
        self.net = net
        self.mode = mode
        self.robot_radius = robot_radius
        self.ped_radius = ped_radius
        self.record = record
        self.name = name
        self.steps: list[tuple[np.ndarray, np.ndarray, int]] = []

    def reset(self, sim, episode):
        super().reset(sim, episode)
        self.state = self.net.initial_state()
        self.rng = np.random.default_rng(episode.seed)
        self.steps = []

    def observe(self, obs: Observation) -> tuple[np.ndarray, np.ndarray]:
        sim = obs.sim
        grid = sim.grid
        rx, ry = grid.center(obs.robot)
        px, py = grid.center(obs.previous)
        robot = AgentObservation((rx, ry), (rx - px, ry - py), self.robot_radius)
        peds = [
            AgentObservation(pos, sim.velocity(pid, obs.frame), self.ped_radius)
            for pid, pos in sim.positions_at(obs.frame).items()
        ]
        enc = encode_joint_state(robot, grid.center(obs.goal), peds, sim.store.scene)
        return enc, action_mask(obs.robot, grid)

    def act(self, obs):
        enc, mask = self.observe(obs)
        probs, self.state = self.net.forward(enc, self.state, mask)
        a = select_action(probs, self.mode, self.rng)
        if self.record:
            self.steps.append((enc, mask, a))
        return apply_action(obs.robot, a)


def episode_rewards(result: EpisodeResult, spec: RewardSpec) -> np.ndarray:
    collided = {e.tick for e in result.events}
    out = np.empty(len(result.trace))
    for k, rec in enumerate(result.trace):
        reached = result.reached_goal and k == len(result.trace) - 1
        out[k] = reward(reached, rec.tick in collided, spec)
    return out


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainConfig:
    episodes: int = 1000
    learning_rate: float = 1e-2
    baseline_decay: float = 0.95  # moving-average weight kept per episode
    baseline: str = "distance"  # "global" or "distance" (one average per cells-to-goal)
    credit_lambda: float = 0.2  # 1 = plain returns-to-go; < 1 bootstraps from the baseline
    entropy: float = 0.03  # entropy bonus weight
    batch_episodes: int = 4
    max_grad_norm: float = 5.0
    checkpoint_every: int = 100
    reward: RewardSpec = field(default_factory=RewardSpec)
    hidden: int = 64
    dense: tuple[int, int] = (64, 32)


def train_policy(
    sim: CrowdSimulator,
    config: TrainConfig,
    seed: int,
    episodes: list[Episode] | None = None,
    log_path: str | Path | None = None,
    on_checkpoint: Callable[[int, Checkpoint], None] | None = None,
) -> Checkpoint:
    """Policy-gradient training against a moving-average return baseline.

    Training episodes are sampled from ``sim`` (random start, goal and start
    frame) unless given. Each episode is rolled out with sampled actions.
    Advantages are lambda-returns over the baseline (``credit_lambda=1`` is
    plain REINFORCE); they weight the log-likelihood gradient, plus an
    optional entropy bonus. Gradients are averaged over ``batch_episodes``
    episodes, clipped to ``max_grad_norm`` and applied with Adam.
    """
    net = PolicyNetwork.initialize(seed, hidden=config.hidden, dense=config.dense)
    if episodes is None:
        episodes = sim.make_episodes(config.episodes, seed) if config.episodes else []
    episodes = episodes[: config.episodes]
    controller = PolicyController(net, mode="sample", record=True)
    opt = Adam(config.learning_rate)
    spec = config.reward
    baselines = _Baseline(config.baseline, config.baseline_decay)
    pending: list = []

    def checkpoint(n_done: int) -> Checkpoint:
        meta = {"episodes": n_done, "seed": seed, "config": _config_dict(config)}
        return Checkpoint(net.copy(), spec, meta)

    log_fh = open(log_path, "w", newline="", encoding="utf-8") if log_path else None
    writer = csv.writer(log_fh, lineterminator="\n") if log_fh else None
    if writer:
        writer.writerow(TRAIN_LOG_COLUMNS)
    try:
        for k, ep in enumerate(episodes):
            result = sim.run_episode(controller, ep)
            if result.failed:
                raise RuntimeError(f"training episode {k} failed: {result.error}")
            rewards = episode_rewards(result, spec)
            adv = baselines.advantages(result, rewards, spec.gamma, config.credit_lambda)
            xs = np.array([s[0] for s in controller.steps])
            masks = np.array([s[1] for s in controller.steps])
            acts = np.array([s[2] for s in controller.steps])
            pending.append((xs, acts, adv, masks))
            if len(pending) == config.batch_episodes or k == len(episodes) - 1:
                _apply(net, opt, pending, config.max_grad_norm, config.entropy)
                pending = []
            if writer:
                writer.writerow((k, repr(float(rewards.sum())), result.steps_taken,
                                 int(result.reached_goal), result.sr, result.sp, result.mrp))
            if on_checkpoint and config.checkpoint_every and (k + 1) % config.checkpoint_every == 0:
                on_checkpoint(k + 1, checkpoint(k + 1))
    finally:
        if log_fh:
            log_fh.close()
    final = checkpoint(len(episodes))
    if on_checkpoint:
        on_checkpoint(len(episodes), final)
    return final


class _Baseline:
    """Exponential moving average of returns, optionally one per distance to goal."""

    def __init__(self, kind: str, decay: float):
        if kind not in ("global", "distance"):
            raise ValueError(f"unknown baseline {kind!r}")
        self.kind = kind
        self.decay = decay
        self.values: dict[int, float] = {}

    def _keys(self, result: EpisodeResult) -> np.ndarray:
        """Baseline slot for every state visited, including the final one."""
        n = len(result.trace) + 1
        if self.kind == "global":
            return np.zeros(n, dtype=int)
        goal = result.episode.goal
        cells = [result.episode.start] + [rec.robot for rec in result.trace]
        return np.array([chebyshev(c, goal) for c in cells], dtype=int)

    def advantages(self, result: EpisodeResult, rewards: np.ndarray, gamma: float,
                   lam: float = 1.0) -> np.ndarray:
        """Lambda-return advantages; ``lam == 1`` gives returns-to-go minus baseline.

        The state after the last step is terminal when the episode ended at
        the goal and is valued by the baseline otherwise. Baseline slots are
        updated with this episode's returns afterwards.
        """
        keys = self._keys(result)
        T = len(rewards)
        returns = discounted_returns(rewards, gamma)
        first = {int(k): float(returns[keys[:T] == k].mean()) for k in np.unique(keys[:T])}
        value = np.array([self.values.get(int(k), first.get(int(k), 0.0)) for k in keys])
        if result.reached_goal:
            value[T] = 0.0
        if lam == 1.0:
            adv = returns - value[:T]
        else:
            adv = np.empty(T)
            acc = 0.0
            for t in reversed(range(T)):
                delta = rewards[t] + gamma * value[t + 1] - value[t]
                acc = delta + gamma * lam * acc
                adv[t] = acc
        for k, mean in first.items():
            old = self.values.get(k, mean)
            self.values[k] = self.decay * old + (1 - self.decay) * mean
        return adv


def _apply(net, opt, batch, max_norm, entropy=0.0):
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    for xs, acts, adv, masks in batch:
        if len(acts) == 0:
            continue
        _, g = net.sequence_gradients(xs, acts, adv, masks, entropy=entropy)
        for name in grads:
            grads[name] += g[name]
    for name in grads:
        grads[name] /= len(batch)
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm and norm > max_norm:
        for name in grads:
            grads[name] *= max_norm / norm
    opt.step(net.params, grads)


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["dense"] = list(config.dense)
    return d
