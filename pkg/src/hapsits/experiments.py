"""Baselines, ablations and the two-stage evaluation pipeline.

Each slot is solved in two steps: a decision policy (trained agents, a
search, or random choice) fixes who offloads where, then the allocation
solver splits bandwidth and computing among the chosen groups. Every scheme
runs on the same environment seeds, so comparisons between schemes are paired.
"""
from __future__ import annotations

import dataclasses
import itertools
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .actions import N_ACTIONS, decode_joint, handoff_mask  # noqa: F401  (handoff_mask re-exported)
from .allocsolver import warm_up
from .config import ScenarioConfig
from .delaymodel import MODE_NAMES
from .marl import checkpoint
from .marl.env import HapsEnv
from .marl.networks import AgentNets, NumpyAgents, numpy_inputs

POLICIES = ("vdn", "iql", "exhaustive", "joint-exhaustive", "random")
ALLOCATIONS = ("opt", "equal")


class ShapeMismatch(ValueError):
    """Checkpoint does not fit the scenario (agent count or observation width)."""


class CapExceeded(ValueError):
    """Enumeration requested beyond the configured vehicle cap."""


@dataclass(frozen=True)
class SchemeSpec:
    policy: str = "vdn"
    allocation: str = "opt"
    mask: str = "full"
    cache_mbits: Optional[float] = None
    handoff: bool = False
    f_haps: Optional[float] = None
    f_rsu: Optional[float] = None
    fixed_caching: bool = False
    joint_cap: int = 6

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.allocation not in ALLOCATIONS:
            raise ValueError(f"allocation must be one of {ALLOCATIONS}, got {self.allocation!r}")

    @property
    def name(self) -> str:
        parts = [self.policy, self.allocation, self.mask]
        if self.cache_mbits is not None:
            parts.append(f"cache{self.cache_mbits:g}")
        if self.handoff:
            parts.append("handoff")
        if self.f_haps is not None:
            parts.append(f"haps{self.f_haps / 1e9:g}")
        if self.f_rsu is not None:
            parts.append(f"rsu{self.f_rsu / 1e9:g}")
        if self.fixed_caching:
            parts.append("fixedcache")
        return "-".join(parts)

    def scenario(self, cfg: ScenarioConfig) -> ScenarioConfig:
        changes = {}
        if self.cache_mbits is not None:
            changes["cache_capacity_bits"] = float(self.cache_mbits) * 1e6
        if self.f_haps is not None:
            changes["f_haps"] = float(self.f_haps)
        if self.f_rsu is not None:
            changes["f_rsu"] = float(self.f_rsu)
        return cfg.replace(**changes) if changes else cfg

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)


# -- decision policies ------------------------------------------------------------


class TrainedPolicy:
    """Greedy execution of trained agents; each agent sees only its own history."""

    def __init__(self, net: AgentNets, use_prev_action: bool = True):
        self.net = net
        self.fast = NumpyAgents(net)
        self.use_prev_action = use_prev_action

    def check(self, env: HapsEnv) -> None:
        width = env.obs_dim + (N_ACTIONS if self.use_prev_action else 0)
        if self.net.n_agents != env.n_agents or self.net.input_dim != width:
            raise ShapeMismatch(
                f"checkpoint has {self.net.n_agents} agents x {self.net.input_dim} inputs, "
                f"scenario needs {env.n_agents} x {width}")

    def reset(self, seed: int) -> None:
        self.h = self.fast.init_hidden()
        self.prev = -np.ones(self.net.n_agents, dtype=np.int64)

    def decide(self, env: HapsEnv) -> np.ndarray:
        q, self.h = self.fast.step(numpy_inputs(env.observations(), self.prev, self.use_prev_action), self.h)
        q[~env.avail_actions()] = -np.inf
        self.prev = q.argmax(axis=1)
        return self.prev


class RandomPolicy:
    def check(self, env: HapsEnv) -> None:
        pass

    def reset(self, seed: int) -> None:
        self.rng = np.random.default_rng([seed, 0x5EED])

    def decide(self, env: HapsEnv) -> np.ndarray:
        avail = env.avail_actions()
        return np.array([self.rng.choice(np.flatnonzero(row)) for row in avail])


class ExhaustivePolicy:
    """Enumerate offload decisions with caching held fixed (no new caching)."""

    def __init__(self, joint: bool, cap: int):
        self.joint = joint
        self.cap = cap

    def check(self, env: HapsEnv) -> None:
        if env.n_agents > self.cap:
            raise CapExceeded(f"{env.n_agents} vehicles exceeds the enumeration cap {self.cap}")

    def reset(self, seed: int) -> None:
        pass

    def decide(self, env: HapsEnv) -> np.ndarray:
        mode = "opt" if self.joint else "equal"
        x, _ = exhaustive_offload(env, mode, self.cap)
        return np.asarray(x)


def candidate_offloads(avail: np.ndarray) -> List[Tuple[int, ...]]:
    """All offload vectors x in {0,1,2}^I consistent with the availability table."""
    options = [[x for x in (0, 1, 2) if row[x]] for row in avail]
    return list(itertools.product(*options))


def exhaustive_offload(env: HapsEnv, allocation_mode: str = "equal", cap: int = 6) -> Tuple[List[int], float]:
    """Best offload vector for the current slot and its total delay under ``allocation_mode``.

    The caching decision is held at "store nothing"; the caching state of the
    slot is whatever the RSUs already hold.
    """
    if env.n_agents > cap:
        raise CapExceeded(f"{env.n_agents} vehicles exceeds the enumeration cap {cap}")
    best, best_val = None, np.inf
    for x in candidate_offloads(env.avail_actions()):
        val = env.evaluate_decisions(x, allocation_mode, allocation_mode).total
        if val < best_val:
            best, best_val = list(x), val
    return best, float(best_val)


def make_policy(scheme: SchemeSpec, net: Optional[AgentNets] = None, use_prev_action: bool = True):
    if scheme.policy in ("vdn", "iql"):
        if net is None:
            raise ValueError(f"policy {scheme.policy} needs a trained network")
        return TrainedPolicy(net, use_prev_action)
    if scheme.policy == "random":
        return RandomPolicy()
    return ExhaustivePolicy(scheme.policy == "joint-exhaustive", scheme.joint_cap)


# -- evaluation -------------------------------------------------------------------


@dataclass
class MetricsBundle:
    scheme: SchemeSpec
    seeds: List[int]
    rows: List[Dict] = field(default_factory=list)
    slot_totals: List[float] = field(default_factory=list)
    solve_s: List[float] = field(default_factory=list)

    def _col(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=float)

    @property
    def mean_delay(self) -> float:
        """Mean per-vehicle delay over every (slot, vehicle) row."""
        return float(self._col("total_s").mean())

    @property
    def std_delay(self) -> float:
        return float(self._col("total_s").std())

    @property
    def comm_mean(self) -> float:
        return float(self._col("comm_s").mean())

    @property
    def comp_mean(self) -> float:
        return float(self._col("comp_s").mean())

    def mode_ratios(self) -> Dict[str, float]:
        modes = [r["mode"] for r in self.rows]
        return {m: modes.count(m) / len(modes) for m in MODE_NAMES.values()}

    def cdf(self, points: int = 101) -> Tuple[np.ndarray, np.ndarray]:
        """Empirical CDF of per-vehicle delay on an evenly spaced grid."""
        d = np.sort(self._col("total_s"))
        grid = np.linspace(0.0, d[-1], points)
        return grid, np.searchsorted(d, grid, side="right") / d.size

    @property
    def mean_solve_ms(self) -> float:
        return 1e3 * float(np.mean(self.solve_s))

    def summary(self) -> Dict:
        grid, prob = self.cdf()
        return {
            "scheme": self.scheme.name,
            "spec": self.scheme.to_dict(),
            "seeds": list(self.seeds),
            "slots": len(self.slot_totals),
            "mean_delay_s": self.mean_delay,
            "std_delay_s": self.std_delay,
            "comm_s": self.comm_mean,
            "comp_s": self.comp_mean,
            "mode_ratios": self.mode_ratios(),
            "mean_solve_ms": self.mean_solve_ms,
            "cdf": {"delay_s": grid.tolist(), "prob": prob.tolist()},
        }


def load_network(source: Union[str, Path, AgentNets, None]) -> Optional[AgentNets]:
    if source is None or isinstance(source, AgentNets):
        return source
    net, _ = checkpoint.load(source)
    return net


def evaluate_policy(source, cfg: ScenarioConfig, seeds: Sequence[int], scheme: SchemeSpec,
                    slots: Optional[int] = None) -> MetricsBundle:
    """Run ``scheme`` for ``slots`` slots (default: one episode) on each environment seed.

    ``source`` is a checkpoint path or a network for trained policies and is
    ignored otherwise. Solving time per slot covers the decision and the
    resource allocation, not the delay bookkeeping or the environment update.
    """
    scen = scheme.scenario(cfg)
    policy = make_policy(scheme, load_network(source), scen.rl.prev_action_input)
    n_slots = scen.episode_length if slots is None else min(int(slots), scen.episode_length)
    bundle = MetricsBundle(scheme, [int(s) for s in seeds])
    warm_up()
    for seed in bundle.seeds:
        env = HapsEnv(scen, seed, mask=scheme.mask, handoff=scheme.handoff, fixed_caching=scheme.fixed_caching,
                      bandwidth=scheme.allocation, computing=scheme.allocation)
        policy.check(env)
        env.reset()
        policy.reset(seed)
        run_id = f"{scheme.name}-s{seed}"
        for t in range(n_slots):
            start = time.perf_counter()
            u = policy.decide(env)
            x, y = decode_joint(u)
            groups = env.groups_for(x, y)
            alloc = env.allocate(groups)
            bundle.solve_s.append(time.perf_counter() - start)
            res = env.step(u, groups, alloc)
            bundle.slot_totals.append(res.report.total)
            for row in res.report.rows:
                bundle.rows.append({"run_id": run_id, "slot": t, "cav": row.cav_id, "mode": row.mode,
                                    "comm_s": row.comm_s, "comp_s": row.comp_s, "total_s": row.total_s})
            if res.done:
                break
    return bundle
