"""Scenario, learning and solver configuration.

Configuration files are YAML. Top-level keys are ``ScenarioConfig`` fields;
``rl`` and ``solver`` are nested sections, and ``tx_power_dbm`` /
``bandwidth_hz`` are nested maps keyed by transmitter class and link group.
Any field can be overridden from the environment::

    HAPSITS_NUM_CAVS=6            -> cfg.num_cavs = 6
    HAPSITS_RL__LR=1e-3           -> cfg.rl.lr = 1e-3
    HAPSITS_BANDWIDTH_HZ__DL_H=1e7 -> cfg.bandwidth_hz["dl_H"] = 1e7

Values are parsed as YAML scalars, so ``[100, 300]`` or ``true`` work.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

ENV_PREFIX = "HAPSITS_"

COMM_GROUPS = ("dl_H", "ul_H", "dl_R", "ul_R")
TX_CLASSES = ("CAV", "RSU", "HAPS")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


@dataclass
class RLConfig:
    algo: str = "vdn"  # vdn | iql
    lr: float = 5e-4
    gamma: float = 0.95
    batch_size: int = 64
    buffer_size: int = 10_000  # episodes
    hidden: int = 128
    recurrent: bool = True
    prev_action_input: bool = True
    onehot_content: bool = False
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000  # environment steps
    target_update: int = 200  # train steps between hard copies
    episodes_per_epoch: int = 8
    train_steps_per_epoch: int = 1
    epochs: int = 300
    grad_clip: float = 10.0
    # kappa in r = sigmoid(-D_tot / kappa); None means num_cavs * 0.1 s
    reward_scale_s: Optional[float] = None

    def validate(self) -> None:
        if self.algo not in ("vdn", "iql"):
            raise ConfigError(f"rl.algo must be 'vdn' or 'iql', got {self.algo!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("rl.gamma must lie in (0, 1)")
        for name in ("lr", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"rl.{name} must be positive")
        for name in ("batch_size", "buffer_size", "hidden", "episodes_per_epoch",
                     "target_update", "eps_decay_steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"rl.{name} must be >= 1")
        if self.train_steps_per_epoch < 0 or self.epochs < 0:
            raise ConfigError("rl.train_steps_per_epoch and rl.epochs must be >= 0")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError("need 0 <= eps_end <= eps_start <= 1")
        if self.reward_scale_s is not None and self.reward_scale_s <= 0:
            raise ConfigError("rl.reward_scale_s must be positive")


@dataclass
class SolverConfig:
    eta_max: float = 50.0
    delta: float = 1e-8
    inner_tol: float = 1e-8
    b_floor: float = 1e-12
    max_eta_doublings: int = 10

    def validate(self) -> None:
        for name in ("eta_max", "delta", "inner_tol", "b_floor"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"solver.{name} must be positive")
        if self.max_eta_doublings < 0:
            raise ConfigError("solver.max_eta_doublings must be >= 0")


def _default_tx_power() -> Dict[str, float]:
    return {"CAV": 23.0, "RSU": 27.0, "HAPS": 33.0}


def _default_bandwidth() -> Dict[str, float]:
    return {"dl_H": 20e6, "ul_H": 5e6, "dl_R": 20e6, "ul_R": 5e6}


@dataclass
class ScenarioConfig:
    # road and nodes
    road_length_m: float = 400.0
    rsu_positions_m: Tuple[float, ...] = (100.0, 300.0)
    rsu_range_m: float = 100.0
    handoff_range_m: float = 50.0
    haps_altitude_m: float = 20_000.0
    haps_horizontal_m: float = 200.0
    num_cavs: int = 10
    cav_speed_mps: float = 10.0
    slot_duration_s: float = 1.0
    episode_length: int = 150
    # content library
    num_contents: int = 200
    content_size_choices_bits: Tuple[float, ...] = (2e6, 5e6, 8e6)
    library_seed: int = 0
    zipf_exponent: float = 0.8
    # tasks
    task_input_bits_choices: Tuple[float, ...] = (200e3, 500e3, 800e3)
    task_density_choices: Tuple[float, ...] = (500.0, 1000.0, 1500.0)
    task_output_bits_choices: Tuple[float, ...] = (60e3, 90e3)
    # compute and storage (f_haps = 0 or cache 0 are legal sweep points)
    f_cav: float = 2e9
    f_rsu: float = 16e9
    f_haps: float = 50e9
    cache_capacity_bits: float = 600e6
    # radio
    tx_power_dbm: Dict[str, float] = field(default_factory=_default_tx_power)
    bandwidth_hz: Dict[str, float] = field(default_factory=_default_bandwidth)
    noise_psd_dbm_hz: float = -174.0
    carrier_hz: float = 2e9
    antenna_gain_dbi: float = 17.0
    rician_k_db: float = 10.0
    pathloss_exponent: float = 3.7
    min_distance_m: float = 1.0

    rl: RLConfig = field(default_factory=RLConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        for name in ("rsu_positions_m", "content_size_choices_bits", "task_input_bits_choices",
                     "task_density_choices", "task_output_bits_choices"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        if isinstance(self.rl, Mapping):
            self.rl = _build(RLConfig, self.rl, "rl")
        if isinstance(self.solver, Mapping):
            self.solver = _build(SolverConfig, self.solver, "solver")
        self.tx_power_dbm = {**_default_tx_power(), **dict(self.tx_power_dbm)}
        self.bandwidth_hz = {**_default_bandwidth(), **dict(self.bandwidth_hz)}
        self.validate()

    @property
    def num_rsus(self) -> int:
        return len(self.rsu_positions_m)

    @property
    def segment_bounds_m(self) -> Tuple[float, ...]:
        """Boundaries between RSU segments: midpoints of adjacent RSUs."""
        p = self.rsu_positions_m
        return tuple((a + b) / 2.0 for a, b in zip(p[:-1], p[1:]))

    @property
    def reward_scale_s(self) -> float:
        if self.rl.reward_scale_s is not None:
            return float(self.rl.reward_scale_s)
        return 0.1 * self.num_cavs

    def validate(self) -> None:
        positive = ("road_length_m", "rsu_range_m", "handoff_range_m", "haps_altitude_m",
                    "cav_speed_mps", "slot_duration_s", "f_cav", "f_rsu", "carrier_hz",
                    "min_distance_m")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.f_haps < 0 or self.cache_capacity_bits < 0:
            raise ConfigError("f_haps and cache_capacity_bits must be >= 0")
        for name in ("num_cavs", "num_contents", "episode_length"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.rsu_positions_m:
            raise ConfigError("at least one RSU is required")
        if list(self.rsu_positions_m) != sorted(self.rsu_positions_m):
            raise ConfigError("rsu_positions_m must be sorted ascending")
        if any(p < 0 or p > self.road_length_m for p in self.rsu_positions_m):
            raise ConfigError("every RSU position must lie within [0, road_length_m]")
        for name in ("content_size_choices_bits", "task_input_bits_choices",
                     "task_density_choices", "task_output_bits_choices"):
            vals = getattr(self, name)
            if not vals or any(v <= 0 for v in vals):
                raise ConfigError(f"{name} must be a non-empty set of positive values")
        if self.zipf_exponent < 0:
            raise ConfigError("zipf_exponent must be >= 0")
        if not self.pathloss_exponent > 2:
            raise ConfigError("pathloss_exponent must exceed 2")
        if set(self.tx_power_dbm) != set(TX_CLASSES):
            raise ConfigError(f"tx_power_dbm keys must be {TX_CLASSES}")
        if set(self.bandwidth_hz) != set(COMM_GROUPS):
            raise ConfigError(f"bandwidth_hz keys must be {COMM_GROUPS}")
        if any(v <= 0 for v in self.bandwidth_hz.values()):
            raise ConfigError("bandwidths must be strictly positive")
        self.rl.validate()
        self.solver.validate()

    def replace(self, **changes: Any) -> "ScenarioConfig":
        """Copy with top-level fields replaced; ``rl``/``solver`` accept dicts of overrides."""
        data = self.to_dict()
        for key, value in changes.items():
            if key in ("rl", "solver") and isinstance(value, Mapping):
                data[key].update(value)
            else:
                data[key] = value
        return from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, data: Mapping[str, Any], where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**dict(data))
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


def from_dict(data: Mapping[str, Any]) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "config")


def apply_env_overrides(data: Dict[str, Any], environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Merge ``HAPSITS_*`` variables into a raw config mapping (in place)."""
    environ = os.environ if environ is None else environ
    top = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].split("__")
        value = yaml.safe_load(raw)
        if isinstance(value, str):
            # YAML 1.1 reads "1e7" as a string; numbers are what overrides mean
            try:
                value = float(value)
            except ValueError:
                pass
        head = path[0].lower()
        if head not in top:
            raise ConfigError(f"environment override {key} names no config field")
        if len(path) == 1:
            data[head] = value
        elif len(path) == 2:
            if head == "bandwidth_hz":
                sub = {g.lower(): g for g in COMM_GROUPS}.get(path[1].lower(), path[1])
            elif head == "tx_power_dbm":
                sub = path[1].upper()
            else:
                sub = path[1].lower()
            data.setdefault(head, {})[sub] = value
        else:
            raise ConfigError(f"environment override {key} nests too deeply")
    return data


def load_config(path: Optional[os.PathLike] = None, environ: Optional[Mapping[str, str]] = None) -> ScenarioConfig:
    """Read a YAML config (or defaults when ``path`` is None) and apply env overrides."""
    data: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        data = loaded
    apply_env_overrides(data, environ)
    return from_dict(data)


def dump_config(cfg: ScenarioConfig, path: os.PathLike) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
