"""Vehicle mobility, content library and per-slot task generation."""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from .config import ScenarioConfig

Number = Union[int, float]


@dataclass(frozen=True)
class CavState:
    id: int
    position_m: float
    associated_rsu: int


@dataclass(frozen=True)
class Task:
    cav_id: int
    content_id: int  # 1-based rank in the popularity-sorted library
    input_bits: Number
    output_bits: Number
    density: Number  # cycles per bit
    workload: Number  # cycles

    def __post_init__(self) -> None:
        if self.workload != self.input_bits * self.density:
            raise ValueError("workload must equal input_bits * density")


def _exact(v: float) -> Number:
    # integral values become ints so products stay exact
    return int(v) if float(v).is_integer() else float(v)


def associated_rsu(position_m: float, cfg: ScenarioConfig) -> int:
    """Index of the RSU whose segment contains ``position_m``."""
    return bisect.bisect_right(cfg.segment_bounds_m, position_m)


def make_cav(cav_id: int, position_m: float, cfg: ScenarioConfig) -> CavState:
    return CavState(cav_id, float(position_m), associated_rsu(position_m, cfg))


def initial_cavs(rng: np.random.Generator, cfg: ScenarioConfig) -> List[CavState]:
    """Drop ``num_cavs`` vehicles uniformly at random on the road."""
    pos = rng.uniform(0.0, cfg.road_length_m, size=cfg.num_cavs)
    return [make_cav(i, p, cfg) for i, p in enumerate(pos)]


def advance_mobility(state: Sequence[CavState], cfg: ScenarioConfig) -> List[CavState]:
    """Move every vehicle one slot forward; the road wraps around so the fleet size is fixed."""
    step = cfg.cav_speed_mps * cfg.slot_duration_s
    out = []
    for cav in state:
        pos = cav.position_m + step
        if pos >= cfg.road_length_m:
            pos = pos % cfg.road_length_m
        out.append(make_cav(cav.id, pos, cfg))
    return out


def zipf_pmf(num_items: int, exponent: float) -> np.ndarray:
    """Probability of ranks 1..num_items, proportional to rank**-exponent."""
    ranks = np.arange(1, num_items + 1, dtype=float)
    weights = ranks ** (-exponent)
    return weights / weights.sum()


def content_sizes(cfg: ScenarioConfig) -> np.ndarray:
    """Size in bits of each library item (index n-1 holds content n).

    Drawn once per realization from ``library_seed`` so that training and
    evaluation runs see the same library.
    """
    rng = np.random.default_rng(cfg.library_seed)
    choices = np.asarray(cfg.content_size_choices_bits, dtype=float)
    return choices[rng.integers(len(choices), size=cfg.num_contents)]


def sample_tasks(rng: np.random.Generator, cfg: ScenarioConfig) -> List[Task]:
    """One task per vehicle: a Zipf-distributed content request plus uniform task parameters."""
    n = cfg.num_cavs
    pmf = zipf_pmf(cfg.num_contents, cfg.zipf_exponent)
    content = rng.choice(cfg.num_contents, size=n, p=pmf) + 1
    eps_i = rng.integers(len(cfg.task_input_bits_choices), size=n)
    den_i = rng.integers(len(cfg.task_density_choices), size=n)
    out_i = rng.integers(len(cfg.task_output_bits_choices), size=n)
    tasks = []
    for i in range(n):
        eps = _exact(cfg.task_input_bits_choices[eps_i[i]])
        dens = _exact(cfg.task_density_choices[den_i[i]])
        tasks.append(Task(
            cav_id=i,
            content_id=int(content[i]),
            input_bits=eps,
            output_bits=_exact(cfg.task_output_bits_choices[out_i[i]]),
            density=dens,
            workload=eps * dens,
        ))
    return tasks
