"""Decentralised multi-vehicle environment: one agent per vehicle, shared team reward."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import actions as act
from ..allocsolver import optimal_allocation
from ..cache import RsuCache
from ..config import ScenarioConfig
from ..delaymodel import Allocation, DelayReport, equal_allocation, evaluate
from ..grouping import Groups, SlotChannels, build_groups, compute_channels, draw_fading
from ..scenario import CavState, Task, advance_mobility, content_sizes, initial_cavs, sample_tasks, zipf_pmf


def sigmoid(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def team_reward(total_delay_s: float, scale_s: float) -> float:
    return sigmoid(-total_delay_s / scale_s)


@dataclass
class SlotState:
    t: int
    cavs: List[CavState]
    tasks: List[Task]
    channels: SlotChannels
    s: List[int]


@dataclass
class StepResult:
    reward: float
    done: bool
    report: DelayReport
    x: List[int]
    y: List[int]
    s: List[int]
    groups: Groups


class HapsEnv:
    """Slot-level simulator.

    Exogenous randomness (initial positions, tasks, fading) comes from one
    generator seeded with ``seed`` and is consumed in a fixed pattern, so two
    runs with the same seed see the same world regardless of the actions taken.

    ``allocation`` selects how each slot's resources are split when computing
    the delay: ``("equal", "equal")`` during training, ``("opt", "opt")`` for the
    two-stage evaluation. ``fixed_caching`` pre-fills every RSU with the most
    popular contents and ignores caching decisions.
    """

    def __init__(self, cfg: ScenarioConfig, seed: int, mask: str = "full", handoff: bool = False,
                 fixed_caching: bool = False, bandwidth: str = "equal", computing: str = "equal"):
        self.cfg = cfg
        self.seed = seed
        self.mask = mask
        self.handoff = handoff
        self.fixed_caching = fixed_caching
        self.bandwidth = bandwidth
        self.computing = computing
        self.sizes = content_sizes(cfg)
        self.rng = np.random.default_rng(seed)
        self.caches = [RsuCache(cfg.cache_capacity_bits) for _ in range(cfg.num_rsus)]
        self._norm = (
            max(cfg.task_input_bits_choices),
            max(cfg.task_output_bits_choices),
            max(cfg.task_density_choices),
        )
        self.state: Optional[SlotState] = None
        act.available_actions([], cfg, mask)  # validates the mask name

    # -- observation -------------------------------------------------------------

    @property
    def n_agents(self) -> int:
        return self.cfg.num_cavs

    @property
    def obs_dim(self) -> int:
        return 5 + (self.cfg.num_contents if self.cfg.rl.onehot_content else 1)

    def observations(self) -> np.ndarray:
        cfg, st = self.cfg, self.state
        obs = np.zeros((cfg.num_cavs, self.obs_dim), dtype=np.float32)
        eps_max, phi_max, den_max = self._norm
        for i, (cav, task) in enumerate(zip(st.cavs, st.tasks)):
            obs[i, 0] = cav.position_m / cfg.road_length_m
            obs[i, 1] = st.s[i]
            obs[i, 2] = task.input_bits / eps_max
            obs[i, 3] = task.output_bits / phi_max
            obs[i, 4] = task.density / den_max
            if cfg.rl.onehot_content:
                obs[i, 5 + task.content_id - 1] = 1.0
            else:
                obs[i, 5] = task.content_id / cfg.num_contents
        return obs

    def avail_actions(self) -> np.ndarray:
        return act.available_actions(self.state.cavs, self.cfg, self.mask, self.handoff)

    # -- dynamics ------------------------------------------------------------------

    def _cache_flags(self, cavs: Sequence[CavState], tasks: Sequence[Task]) -> List[int]:
        return [int(self.caches[c.associated_rsu].contains(t.content_id)) for c, t in zip(cavs, tasks)]

    def _draw_slot(self, t: int, cavs: List[CavState]) -> SlotState:
        tasks = sample_tasks(self.rng, self.cfg)
        fading = draw_fading(self.rng, self.cfg)
        channels = compute_channels(cavs, fading, self.cfg)
        return SlotState(t, cavs, tasks, channels, self._cache_flags(cavs, tasks))

    def _prefill(self) -> None:
        order = np.argsort(-zipf_pmf(self.cfg.num_contents, self.cfg.zipf_exponent), kind="stable")
        for cache in self.caches:
            for idx in order:
                size = float(self.sizes[idx])
                if cache.used_bits + size > cache.capacity_bits:
                    break
                cache.insert(int(idx) + 1, size)

    def reset(self) -> np.ndarray:
        for cache in self.caches:
            cache.clear()
        if self.fixed_caching:
            self._prefill()
        cavs = initial_cavs(self.rng, self.cfg)
        self.state = self._draw_slot(0, cavs)
        return self.observations()

    def allocate(self, groups: Groups) -> Allocation:
        if self.bandwidth == "equal" and self.computing == "equal":
            return equal_allocation(groups)
        return optimal_allocation(groups, self.cfg.solver, self.bandwidth, self.computing)

    def groups_for(self, x: Sequence[int], y: Optional[Sequence[int]] = None) -> Groups:
        st = self.state
        y = [0] * len(x) if y is None else y
        return build_groups(x, y, st.s, st.tasks, st.cavs, st.channels, self.sizes, self.cfg)

    def evaluate_decisions(self, x: Sequence[int], bandwidth: str, computing: str) -> DelayReport:
        """Delay of offload decisions ``x`` in the current slot without advancing time."""
        groups = self.groups_for(x)
        if bandwidth == "equal" and computing == "equal":
            alloc = equal_allocation(groups)
        else:
            alloc = optimal_allocation(groups, self.cfg.solver, bandwidth, computing)
        st = self.state
        return evaluate(groups, alloc, st.tasks, st.cavs, self.cfg)

    def step(self, actions: Sequence[int], groups: Optional[Groups] = None,
             alloc: Optional[Allocation] = None) -> StepResult:
        """Apply a joint action. ``groups``/``alloc`` may be supplied when already computed."""
        st = self.state
        if st is None:
            raise RuntimeError("call reset() first")
        actions = [int(u) for u in actions]
        if len(actions) != self.cfg.num_cavs:
            raise ValueError("one action per vehicle required")
        avail = self.avail_actions()
        for i, u in enumerate(actions):
            if not avail[i, u]:
                raise ValueError(f"vehicle {i}: action {u} is not available")
        x, y = act.decode_joint(actions)
        if groups is None:
            groups = self.groups_for(x, y)
        if alloc is None:
            alloc = self.allocate(groups)
        report = evaluate(groups, alloc, st.tasks, st.cavs, self.cfg)
        reward = team_reward(report.total, self.cfg.reward_scale_s)

        if not self.fixed_caching:
            per_rsu: Dict[int, list] = {}
            for i, yi in enumerate(y):
                if yi:
                    cav, task = st.cavs[i], st.tasks[i]
                    size = float(self.sizes[task.content_id - 1])
                    if self.caches[cav.associated_rsu].fits(size):
                        per_rsu.setdefault(cav.associated_rsu, []).append((task.content_id, size))
            for m, decisions in per_rsu.items():
                self.caches[m].apply_caching_decisions(decisions)

        t = st.t + 1
        done = t >= self.cfg.episode_length
        s_now = list(st.s)
        if not done:
            self.state = self._draw_slot(t, advance_mobility(st.cavs, self.cfg))
        return StepResult(reward, done, report, x, y, s_now, groups)
