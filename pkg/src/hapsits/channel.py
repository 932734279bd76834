"""Link gains and Shannon rates for the HAPS (LoS) and RSU (NLoS) links."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class LinkGeometry:
    tx_class: str  # CAV | RSU | HAPS
    rx_class: str
    distance_m: float
    los: bool


def dbm_to_watts(dbm: ArrayLike) -> ArrayLike:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def reference_gain(carrier_hz: float) -> float:
    """Free-space power gain at 1 m, used as the NLoS reference path loss."""
    return (SPEED_OF_LIGHT / (4.0 * math.pi * carrier_hz)) ** 2


def los_gain(geom: LinkGeometry, antenna_gain: float, carrier_hz: float, fading_power: ArrayLike) -> ArrayLike:
    """Free-space gain times directional antenna gain times fading power."""
    if not geom.los:
        raise ValueError("los_gain called on an NLoS link")
    if geom.distance_m <= 0:
        raise ValueError("link distance must be positive")
    fspl = (SPEED_OF_LIGHT / (4.0 * math.pi * geom.distance_m * carrier_hz)) ** 2
    return antenna_gain * fspl * fading_power


def nlos_gain(geom: LinkGeometry, beta0: float, alpha: float, fading_power: ArrayLike) -> ArrayLike:
    """Reference gain over distance**alpha times fading power."""
    if geom.los:
        raise ValueError("nlos_gain called on a LoS link")
    if geom.distance_m <= 0:
        raise ValueError("link distance must be positive")
    return beta0 * fading_power / geom.distance_m ** alpha


def sample_fading(rng: np.random.Generator, los: bool, rician_k_db: float,
                  size: Optional[int] = None) -> ArrayLike:
    """Unit-mean small-scale fading power |h|^2.

    LoS links use a Rician envelope with factor K (given in dB, ``inf`` for a
    pure specular path); NLoS links use Rayleigh, i.e. an exponential power.
    """
    shape = () if size is None else (size,)
    if los:
        k = math.inf if math.isinf(rician_k_db) else db_to_linear(rician_k_db)
        re = rng.standard_normal(shape)
        im = rng.standard_normal(shape)
        if math.isinf(k):
            out = np.ones(shape)
        else:
            los_amp = math.sqrt(k / (k + 1.0))
            sigma = math.sqrt(1.0 / (2.0 * (k + 1.0)))
            out = (los_amp + sigma * re) ** 2 + (sigma * im) ** 2
    else:
        re = rng.standard_normal(shape)
        im = rng.standard_normal(shape)
        out = 0.5 * (re ** 2 + im ** 2)
    return float(out) if size is None else out


def rate(b: float, bandwidth_hz: float, tx_power_w: float, gain: float, noise_psd_w_hz: float) -> float:
    """Achievable rate (bit/s) with a fraction ``b`` of the group bandwidth."""
    if not b > 0:
        raise ValueError(f"bandwidth ratio must be positive, got {b}")
    bw = b * bandwidth_hz
    return bw * math.log2(1.0 + tx_power_w * gain / (bw * noise_psd_w_hz))


def haps_distance(x_m: float, haps_horizontal_m: float, haps_altitude_m: float) -> float:
    return math.hypot(x_m - haps_horizontal_m, haps_altitude_m)


def ground_distance(x_m: float, rsu_x_m: float, min_distance_m: float) -> float:
    """Planar RSU-vehicle distance, clamped below at the reference distance."""
    return max(abs(x_m - rsu_x_m), min_distance_m)
