"""Per-vehicle task delay under local, HAPS and RSU computing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from . import channel as ch
from .config import COMM_GROUPS, ScenarioConfig
from .grouping import GROUP_TX, HAPS, LOCAL, RSU, CommGroupMember, Groups, comp_group_name
from .scenario import CavState, Task

MODE_NAMES = {LOCAL: "local", HAPS: "haps", RSU: "rsu"}


class DelayModelError(KeyError):
    pass


@dataclass
class Allocation:
    b: Dict[Tuple[int, str], float] = field(default_factory=dict)  # (cav, comm group) -> ratio
    f: Dict[Tuple[int, str], float] = field(default_factory=dict)  # (cav, server group) -> ratio

    def check_feasible(self, tol: float = 1e-9) -> None:
        for name, table in (("b", self.b), ("f", self.f)):
            totals: Dict[str, float] = {}
            for (_, g), v in table.items():
                if not v > 0:
                    raise ValueError(f"{name} ratio for group {g} is not positive")
                totals[g] = totals.get(g, 0.0) + v
            for g, t in totals.items():
                if t > 1.0 + tol:
                    raise ValueError(f"{name} ratios in group {g} sum to {t} > 1")


@dataclass(frozen=True)
class CavDelay:
    cav_id: int
    mode: str
    comm_s: float
    comp_s: float

    @property
    def total_s(self) -> float:
        return self.comm_s + self.comp_s


@dataclass
class DelayReport:
    rows: List[CavDelay]

    @property
    def total(self) -> float:
        return total_delay(self.rows)

    @property
    def comm_total(self) -> float:
        return sum(r.comm_s for r in self.rows)

    @property
    def comp_total(self) -> float:
        return sum(r.comp_s for r in self.rows)

    @property
    def mean(self) -> float:
        return self.total / len(self.rows) if self.rows else 0.0

    @property
    def std(self) -> float:
        if not self.rows:
            return 0.0
        mu = self.mean
        return math.sqrt(sum((r.total_s - mu) ** 2 for r in self.rows) / len(self.rows))

    def mode_ratios(self) -> Dict[str, float]:
        n = len(self.rows)
        out = {name: 0.0 for name in MODE_NAMES.values()}
        for r in self.rows:
            out[r.mode] += 1.0 / n
        return out


def equal_allocation(groups: Groups) -> Allocation:
    alloc = Allocation()
    for k, members in groups.comm.items():
        for m in members:
            alloc.b[(m.cav_id, k)] = 1.0 / len(members)
    for name, g in groups.comp.items():
        if g.is_server:
            for i in g.members:
                alloc.f[(i, name)] = 1.0 / len(g.members)
    return alloc


def _index_members(groups: Groups) -> Dict[int, Dict[str, CommGroupMember]]:
    idx: Dict[int, Dict[str, CommGroupMember]] = {}
    for k, members in groups.comm.items():
        for m in members:
            idx.setdefault(m.cav_id, {})[k] = m
    return idx


class _RateContext:
    def __init__(self, cfg: ScenarioConfig):
        self.n0 = ch.dbm_to_watts(cfg.noise_psd_dbm_hz)
        self.power = {k: ch.dbm_to_watts(cfg.tx_power_dbm[GROUP_TX[k]]) for k in COMM_GROUPS}
        self.bw = cfg.bandwidth_hz

    def transfer(self, member: CommGroupMember, alloc: Allocation) -> float:
        key = (member.cav_id, member.group)
        if key not in alloc.b:
            raise DelayModelError(f"no bandwidth ratio for vehicle {key[0]} in group {key[1]}")
        r = ch.rate(alloc.b[key], self.bw[member.group], self.power[member.group], member.gain, self.n0)
        return member.payload_bits / r if r > 0 else math.inf


def cav_delay(cav: CavState, groups: Groups, alloc: Allocation, task: Task, cfg: ScenarioConfig,
              _ctx: _RateContext = None, _idx: Dict[int, Dict[str, CommGroupMember]] = None) -> Tuple[float, float]:
    """(communication, computation) delay of one vehicle.

    Missing group memberships or allocation entries are errors, never defaulted.
    """
    ctx = _ctx or _RateContext(cfg)
    links = (_idx if _idx is not None else _index_members(groups)).get(cav.id, {})
    i = cav.id
    x, s = groups.x[i], groups.s[i]

    def hop(k: str) -> float:
        if k not in links:
            raise DelayModelError(f"vehicle {i} has no membership in group {k}")
        return ctx.transfer(links[k], alloc)

    def share(j: str) -> float:
        if (i, j) not in alloc.f:
            raise DelayModelError(f"no computing ratio for vehicle {i} at {j}")
        return alloc.f[(i, j)]

    if x == LOCAL:
        comm = hop("dl_R") if s else hop("dl_H")
        comp = task.workload / cfg.f_cav
    elif x == HAPS:
        comm = hop("ul_H") + hop("dl_H")
        comp = task.workload / (share("HAPS") * cfg.f_haps)
    elif x == RSU:
        comm = (0.0 if s else hop("dl_H")) + hop("ul_R") + hop("dl_R")
        comp = task.workload / (share(comp_group_name(RSU, cav)) * cfg.f_rsu)
    else:
        raise ValueError(f"unknown offload decision {x}")
    return comm, comp


def evaluate(groups: Groups, alloc: Allocation, tasks: Sequence[Task], cavs: Sequence[CavState],
             cfg: ScenarioConfig) -> DelayReport:
    ctx = _RateContext(cfg)
    idx = _index_members(groups)
    rows = []
    for cav, task in zip(cavs, tasks):
        comm, comp = cav_delay(cav, groups, alloc, task, cfg, ctx, idx)
        rows.append(CavDelay(cav.id, MODE_NAMES[groups.x[cav.id]], comm, comp))
    return DelayReport(rows)


def total_delay(rows: Sequence[CavDelay]) -> float:
    return sum(r.total_s for r in rows)
