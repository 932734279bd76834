"""Value-decomposition (VDN) and independent (IQL) deep Q-learning over whole episodes."""
from __future__ import annotations

import copy
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..actions import N_ACTIONS
from ..config import ScenarioConfig
from .env import HapsEnv
from .networks import AgentNets, build_inputs

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def vdn_mix(chosen_q: torch.Tensor) -> torch.Tensor:
    """Joint value as the plain sum of per-agent values over the last axis."""
    return chosen_q.sum(dim=-1)


def td_target(reward: torch.Tensor, next_max_q: torch.Tensor, gamma: float, terminal: torch.Tensor,
              mode: str = "vdn") -> torch.Tensor:
    """Bootstrapped targets.

    ``next_max_q`` holds each agent's greedy target value at the next step,
    shape (..., n_agents). Under VDN the joint max splits into the sum of
    per-agent maxima; under IQL each agent gets its own target.
    """
    cont = gamma * (1.0 - terminal)
    if mode == "vdn":
        return reward + cont * next_max_q.sum(dim=-1)
    if mode == "iql":
        return reward.unsqueeze(-1) + cont.unsqueeze(-1) * next_max_q
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class Episode:
    obs: np.ndarray  # (T+1, A, D); row T is padding
    actions: np.ndarray  # (T, A)
    avail: np.ndarray  # (T+1, A, 4)
    rewards: np.ndarray  # (T,)
    terminal: np.ndarray  # (T,)


class ReplayBuffer:
    """Whole-episode replay with oldest-first eviction."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._eps: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._eps)

    def add(self, ep: Episode) -> None:
        self._eps.append(ep)

    def sample(self, rng: np.random.Generator, batch: int) -> Dict[str, torch.Tensor]:
        if len(self._eps) < batch:
            raise ValueError(f"buffer holds {len(self._eps)} episodes, need {batch}")
        idx = rng.choice(len(self._eps), size=batch, replace=False)
        eps = [self._eps[i] for i in idx]
        return collate(eps)


def collate(eps: Sequence[Episode], dtype: torch.dtype = torch.float32) -> Dict[str, torch.Tensor]:
    return {
        "obs": torch.as_tensor(np.stack([e.obs for e in eps]), dtype=dtype),
        "actions": torch.as_tensor(np.stack([e.actions for e in eps]), dtype=torch.long),
        "avail": torch.as_tensor(np.stack([e.avail for e in eps])),
        "rewards": torch.as_tensor(np.stack([e.rewards for e in eps]), dtype=dtype),
        "terminal": torch.as_tensor(np.stack([e.terminal for e in eps]), dtype=dtype),
    }


def unroll(net: AgentNets, obs: torch.Tensor, actions: torch.Tensor, steps: int,
           use_prev_action: bool) -> torch.Tensor:
    """Q-values (B, steps, A, 4) for the first ``steps`` rows of an episode batch."""
    B, _, A, _ = obs.shape
    prev = torch.full((B, steps, A), -1, dtype=torch.long)
    n = min(steps - 1, actions.shape[1])
    prev[:, 1:n + 1] = actions[:, :n]
    q, _ = net.sequence(build_inputs(obs[:, :steps], prev, use_prev_action), net.init_hidden(B))
    return q


def td_loss(net: AgentNets, target_net: AgentNets, batch: Dict[str, torch.Tensor], gamma: float,
            mode: str, use_prev_action: bool) -> torch.Tensor:
    """Mean squared TD error; gradients reach every agent's parameters through the sum."""
    actions = batch["actions"]
    T = actions.shape[1]
    q = unroll(net, batch["obs"], actions, T, use_prev_action)
    chosen = q.gather(-1, actions.unsqueeze(-1)).squeeze(-1)  # (B, T, A)
    with torch.no_grad():
        q_next = unroll(target_net, batch["obs"], actions, T + 1, use_prev_action)[:, 1:]
        q_next = q_next.masked_fill(~batch["avail"][:, 1:], -1e9)
        next_max = q_next.max(dim=-1).values
        y = td_target(batch["rewards"], next_max, gamma, batch["terminal"], mode)
    pred = vdn_mix(chosen) if mode == "vdn" else chosen
    return ((y - pred) ** 2).mean()


class Learner:
    def __init__(self, n_agents: int, input_dim: int, cfg: ScenarioConfig, seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        rl = cfg.rl
        self.rl = rl
        self.mode = rl.algo
        self.net = AgentNets(n_agents, input_dim, rl.hidden, rl.recurrent, seed=seed, dtype=dtype)
        self.target = copy.deepcopy(self.net)
        for p in self.target.parameters():
            p.requires_grad_(False)
        self.opt = torch.optim.Adam(self.net.parameters(), lr=rl.lr)
        self.train_steps = 0

    def train_step(self, batch: Dict[str, torch.Tensor], dump_dir: Optional[Path] = None) -> float:
        loss = td_loss(self.net, self.target, batch, self.rl.gamma, self.mode, self.rl.prev_action_input)
        if not torch.isfinite(loss):
            diag = {
                "train_step": self.train_steps,
                "reward_range": (float(batch["rewards"].min()), float(batch["rewards"].max())),
                "param_norms": {n: float(p.detach().norm()) for n, p in self.net.named_parameters()},
            }
            if dump_dir is not None:
                Path(dump_dir).mkdir(parents=True, exist_ok=True)
                (Path(dump_dir) / "nonfinite_loss.txt").write_text(repr(diag), encoding="utf-8")
            raise TrainingError(f"non-finite loss: {diag}")
        self.opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.net.parameters(), self.rl.grad_clip)
        self.opt.step()
        self.train_steps += 1
        if self.train_steps % self.rl.target_update == 0:
            self.target.load_state_dict(self.net.state_dict())
        return float(loss.detach())


def epsilon_at(step: int, rl) -> float:
    frac = min(1.0, step / rl.eps_decay_steps)
    return rl.eps_start + frac * (rl.eps_end - rl.eps_start)


def act(net: AgentNets, obs: np.ndarray, prev_actions: np.ndarray, h: torch.Tensor, epsilon: float,
        rng: np.random.Generator, avail: Optional[np.ndarray] = None,
        use_prev_action: bool = True) -> Tuple[np.ndarray, torch.Tensor]:
    """Epsilon-greedy joint action; each agent sees only its own row of ``obs``."""
    A = obs.shape[0]
    avail = np.ones((A, N_ACTIONS), dtype=bool) if avail is None else avail
    with torch.no_grad():
        inp = build_inputs(torch.as_tensor(obs, dtype=net.w_in.dtype).unsqueeze(0),
                           torch.as_tensor(prev_actions, dtype=torch.long).unsqueeze(0), use_prev_action)
        q, h = net(inp, h)
    q = q[0].numpy().astype(float)
    q[~avail] = -np.inf
    greedy = q.argmax(axis=1)
    if epsilon <= 0:
        return greedy, h
    explore = rng.random(A) < epsilon
    out = greedy.copy()
    for i in np.flatnonzero(explore):
        out[i] = rng.choice(np.flatnonzero(avail[i]))
    return out, h


@dataclass
class EpisodeStats:
    reward: float
    mean_delay_s: float
    mode_counts: np.ndarray


def run_episode(env: HapsEnv, net: AgentNets, epsilon: Callable[[], float], rng: np.random.Generator,
                use_prev_action: bool, on_step: Optional[Callable[[int], None]] = None) -> Tuple[Episode, EpisodeStats]:
    T, A, D = env.cfg.episode_length, env.n_agents, env.obs_dim
    obs_buf = np.zeros((T + 1, A, D), dtype=np.float32)
    avail_buf = np.ones((T + 1, A, N_ACTIONS), dtype=bool)
    act_buf = np.zeros((T, A), dtype=np.int64)
    rew = np.zeros(T, dtype=np.float32)
    term = np.zeros(T, dtype=np.float32)
    obs = env.reset()
    h = net.init_hidden(1)
    prev = -np.ones(A, dtype=np.int64)
    delays = []
    modes = np.zeros(3)
    for t in range(T):
        avail = env.avail_actions()
        obs_buf[t], avail_buf[t] = obs, avail
        u, h = act(net, obs, prev, h, epsilon(), rng, avail, use_prev_action)
        res = env.step(u)
        act_buf[t], rew[t] = u, res.reward
        delays.append(res.report.mean)
        for xi in res.x:
            modes[xi] += 1
        prev = u
        if on_step is not None:
            on_step(1)
        if res.done:
            term[t] = 1.0
            break
        obs = env.observations()
    ep = Episode(obs_buf, act_buf, avail_buf, rew, term)
    return ep, EpisodeStats(float(rew.sum()), float(np.mean(delays)), modes)


@dataclass
class TrainResult:
    learner: Learner
    log: List[Dict[str, float]] = field(default_factory=list)
    env_steps: int = 0


def train(cfg: ScenarioConfig, seed: int, mask: str = "full", handoff: bool = False,
          epochs: Optional[int] = None, dump_dir: Optional[Path] = None,
          progress: Optional[Callable[[Dict[str, float]], None]] = None) -> TrainResult:
    """Train agents with epsilon-greedy rollouts under equal resource allocation."""
    torch.set_num_threads(1)
    rl = cfg.rl
    epochs = rl.epochs if epochs is None else epochs
    ss = np.random.SeedSequence(seed)
    env_seed, net_seed, explore_seed, replay_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    env = HapsEnv(cfg, env_seed, mask=mask, handoff=handoff)
    learner = Learner(env.n_agents, env.obs_dim + (N_ACTIONS if rl.prev_action_input else 0), cfg, seed=net_seed)
    explore_rng = np.random.default_rng(explore_seed)
    replay_rng = np.random.default_rng(replay_seed)
    buffer = ReplayBuffer(rl.buffer_size)
    result = TrainResult(learner)
    counter = {"steps": 0}

    def tick(n: int) -> None:
        counter["steps"] += n

    for epoch in range(epochs):
        stats = []
        for _ in range(rl.episodes_per_epoch):
            ep, st = run_episode(env, learner.net, lambda: epsilon_at(counter["steps"], rl), explore_rng,
                                 rl.prev_action_input, tick)
            buffer.add(ep)
            stats.append(st)
        losses = []
        if len(buffer) >= rl.batch_size:
            for _ in range(rl.train_steps_per_epoch):
                losses.append(learner.train_step(buffer.sample(replay_rng, rl.batch_size), dump_dir))
        modes = sum(s.mode_counts for s in stats)
        row = {
            "epoch": epoch,
            "env_steps": counter["steps"],
            "mean_episode_reward": float(np.mean([s.reward for s in stats])),
            "mean_delay_s": float(np.mean([s.mean_delay_s for s in stats])),
            "loss": float(np.mean(losses)) if losses else math.nan,
            "epsilon": epsilon_at(counter["steps"], rl),
            "ratio_local": float(modes[0] / modes.sum()),
            "ratio_haps": float(modes[1] / modes.sum()),
            "ratio_rsu": float(modes[2] / modes.sum()),
        }
        result.log.append(row)
        if progress is not None:
            progress(row)
    result.env_steps = counter["steps"]
    return result
