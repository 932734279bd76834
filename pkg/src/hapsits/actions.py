"""Agent action codec and feasibility masks.

u = 0 local, 1 HAPS, 2 RSU without caching, 3 RSU and cache the requested content.
"""
from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from .config import ScenarioConfig
from .scenario import CavState

N_ACTIONS = 4
MASKS = ("full", "worsu", "wohaps")


def decode(u: int) -> Tuple[int, int]:
    """Action -> (offload decision x, caching decision y)."""
    if u not in (0, 1, 2, 3):
        raise ValueError(f"action {u} outside 0..3")
    return (u, 0) if u < 3 else (2, 1)


def decode_joint(actions: Sequence[int]) -> Tuple[list, list]:
    xs, ys = [], []
    for u in actions:
        x, y = decode(int(u))
        xs.append(x)
        ys.append(y)
    return xs, ys


def out_of_rsu_range(cav: CavState, cfg: ScenarioConfig) -> bool:
    return abs(cav.position_m - cfg.rsu_positions_m[cav.associated_rsu]) > cfg.handoff_range_m


def handoff_mask(cav: CavState, cfg: ScenarioConfig) -> np.ndarray:
    """Feasible actions under handoff: RSU actions drop out once the vehicle leaves RSU range."""
    ok = np.ones(N_ACTIONS, dtype=bool)
    if out_of_rsu_range(cav, cfg):
        ok[2:] = False
    return ok


def available_actions(cavs: Sequence[CavState], cfg: ScenarioConfig, mask: str = "full",
                      handoff: bool = False) -> np.ndarray:
    """(num_cavs, 4) boolean table of feasible actions."""
    if mask not in MASKS:
        raise ValueError(f"mask must be one of {MASKS}, got {mask!r}")
    avail = np.ones((len(cavs), N_ACTIONS), dtype=bool)
    if mask == "worsu":
        avail[:, 2:] = False
    if mask == "wohaps" or cfg.f_haps <= 0:
        avail[:, 1] = False
    if handoff:
        for i, cav in enumerate(cavs):
            avail[i] &= handoff_mask(cav, cfg)
    return avail
