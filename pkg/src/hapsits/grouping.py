"""Computing groups (by offload destination) and communication groups (by link type).

Offload decisions: 0 local, 1 HAPS, 2 RSU. Link numbering:

1. HAPS -> RSU downlink (fundamental data for RSU computing)
2. HAPS -> CAV downlink (fundamental data or result)
3. CAV -> HAPS uplink (task input)
4. RSU -> CAV downlink (fundamental data or result)
5. CAV -> RSU uplink (task input)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import channel as ch
from .config import COMM_GROUPS, ScenarioConfig
from .scenario import CavState, Task

LOCAL, HAPS, RSU = 0, 1, 2

# transmitter class for each communication group
GROUP_TX = {"dl_H": "HAPS", "ul_H": "CAV", "dl_R": "RSU", "ul_R": "CAV"}


class GroupingError(ValueError):
    pass


@dataclass
class SlotChannels:
    """Per-slot power gains, fixed for the whole slot.

    ``dl_H``/``ul_H``/``dl_R``/``ul_R`` are indexed by vehicle (RSU links use the
    vehicle's associated RSU); ``relay`` is indexed by RSU (HAPS -> RSU link).
    """
    dl_H: List[float]
    ul_H: List[float]
    dl_R: List[float]
    ul_R: List[float]
    relay: List[float]


def draw_fading(rng: np.random.Generator, cfg: ScenarioConfig) -> Dict[str, np.ndarray]:
    """Fading powers for every potential link; the draw count never depends on decisions."""
    n, m = cfg.num_cavs, cfg.num_rsus
    k = cfg.rician_k_db
    return {
        "dl_H": ch.sample_fading(rng, True, k, n),
        "ul_H": ch.sample_fading(rng, True, k, n),
        "dl_R": ch.sample_fading(rng, False, k, n),
        "ul_R": ch.sample_fading(rng, False, k, n),
        "relay": ch.sample_fading(rng, True, k, m),
    }


def haps_geometry(x_m: float, cfg: ScenarioConfig, rx: str, tx: str = "HAPS") -> ch.LinkGeometry:
    d = ch.haps_distance(x_m, cfg.haps_horizontal_m, cfg.haps_altitude_m)
    return ch.LinkGeometry(tx, rx, d, True)


def rsu_geometry(cav: CavState, cfg: ScenarioConfig, tx: str, rx: str) -> ch.LinkGeometry:
    d = ch.ground_distance(cav.position_m, cfg.rsu_positions_m[cav.associated_rsu], cfg.min_distance_m)
    return ch.LinkGeometry(tx, rx, d, False)


def compute_channels(cavs: Sequence[CavState], fading: Dict[str, np.ndarray], cfg: ScenarioConfig) -> SlotChannels:
    g_ant = ch.db_to_linear(cfg.antenna_gain_dbi)
    beta0 = ch.reference_gain(cfg.carrier_hz)
    fc, alpha = cfg.carrier_hz, cfg.pathloss_exponent
    dl_h, ul_h, dl_r, ul_r = [], [], [], []
    for cav in cavs:
        i = cav.id
        down = haps_geometry(cav.position_m, cfg, rx="CAV")
        up = haps_geometry(cav.position_m, cfg, rx="HAPS", tx="CAV")
        dl_h.append(ch.los_gain(down, g_ant, fc, float(fading["dl_H"][i])))
        ul_h.append(ch.los_gain(up, g_ant, fc, float(fading["ul_H"][i])))
        dl_r.append(ch.nlos_gain(rsu_geometry(cav, cfg, "RSU", "CAV"), beta0, alpha, float(fading["dl_R"][i])))
        ul_r.append(ch.nlos_gain(rsu_geometry(cav, cfg, "CAV", "RSU"), beta0, alpha, float(fading["ul_R"][i])))
    relay = [
        ch.los_gain(haps_geometry(p, cfg, rx="RSU"), g_ant, fc, float(fading["relay"][m]))
        for m, p in enumerate(cfg.rsu_positions_m)
    ]
    return SlotChannels(dl_h, ul_h, dl_r, ul_r, relay)


@dataclass(frozen=True)
class CommGroupMember:
    cav_id: int
    group: str
    link: int
    payload_bits: float
    gain: float
    O: float  # payload / group bandwidth  (bit/Hz)
    H: float  # P * G / (B * N0)


@dataclass
class CompGroup:
    name: str  # HAPS | RSU_1..RSU_M | CAV
    capacity: float
    members: List[int] = field(default_factory=list)
    U: List[float] = field(default_factory=list)  # workload / capacity (s)

    @property
    def is_server(self) -> bool:
        return self.name != "CAV"


@dataclass
class Groups:
    comp: Dict[str, CompGroup]
    comm: Dict[str, List[CommGroupMember]]
    # offload decision and cache flag per vehicle, kept for delay evaluation
    x: List[int]
    s: List[int]

    def memberships(self, cav_id: int) -> Dict[str, CommGroupMember]:
        return {k: m for k, members in self.comm.items() for m in members if m.cav_id == cav_id}


def rsu_group_name(m: int) -> str:
    return f"RSU_{m + 1}"


def comp_group_name(x: int, cav: CavState) -> str:
    if x == LOCAL:
        return "CAV"
    if x == HAPS:
        return "HAPS"
    return rsu_group_name(cav.associated_rsu)


def build_groups(x: Sequence[int], y: Sequence[int], s: Sequence[int], tasks: Sequence[Task],
                 cavs: Sequence[CavState], channels: SlotChannels, sizes: np.ndarray,
                 cfg: ScenarioConfig) -> Groups:
    """Partition vehicles into computing and communication groups for one slot.

    ``sizes[n-1]`` is the size of content ``n``; ``s[i]`` is whether vehicle
    ``i``'s requested content sits in its associated RSU's store.
    """
    n = len(cavs)
    if not (len(x) == len(y) == len(s) == len(tasks) == n):
        raise GroupingError("decision, cache-flag, task and vehicle counts differ")
    n0 = ch.dbm_to_watts(cfg.noise_psd_dbm_hz)
    power = {k: ch.dbm_to_watts(cfg.tx_power_dbm[GROUP_TX[k]]) for k in COMM_GROUPS}
    bw = cfg.bandwidth_hz

    comp: Dict[str, CompGroup] = {"HAPS": CompGroup("HAPS", cfg.f_haps)}
    for m in range(cfg.num_rsus):
        comp[rsu_group_name(m)] = CompGroup(rsu_group_name(m), cfg.f_rsu)
    comp["CAV"] = CompGroup("CAV", cfg.f_cav)
    comm: Dict[str, List[CommGroupMember]] = {k: [] for k in COMM_GROUPS}

    def join(k: str, i: int, link: int, payload: float, gain: float) -> None:
        comm[k].append(CommGroupMember(i, k, link, payload, gain, payload / bw[k],
                                       power[k] * gain / (bw[k] * n0)))

    for i in range(n):
        xi, yi, si = int(x[i]), int(y[i]), int(s[i])
        if xi not in (LOCAL, HAPS, RSU):
            raise GroupingError(f"vehicle {i}: offload decision {xi} not in {{0, 1, 2}}")
        if yi == 1 and xi != RSU:
            raise GroupingError(f"vehicle {i}: caching decision requires RSU computing")
        task, cav = tasks[i], cavs[i]
        omega = float(sizes[task.content_id - 1])
        if xi == LOCAL:
            if si:
                join("dl_R", i, 4, omega, channels.dl_R[i])
            else:
                join("dl_H", i, 2, omega, channels.dl_H[i])
        elif xi == HAPS:
            join("ul_H", i, 3, task.input_bits, channels.ul_H[i])
            join("dl_H", i, 2, task.output_bits, channels.dl_H[i])
        else:
            if not si:
                join("dl_H", i, 1, omega, channels.relay[cav.associated_rsu])
            join("ul_R", i, 5, task.input_bits, channels.ul_R[i])
            join("dl_R", i, 4, task.output_bits, channels.dl_R[i])
        group = comp[comp_group_name(xi, cav)]
        if not group.capacity > 0:
            raise GroupingError(f"vehicle {i}: {group.name} has no compute capacity")
        group.members.append(i)
        group.U.append(task.workload / group.capacity)
    return Groups(comp, comm, [int(v) for v in x], [int(v) for v in s])
