"""Weather-dependent injection models: wind power curve, PV conversion, load-temperature factor."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from ..weatherfield import WeatherSample
from .model import GridError, GridModel
from .powerflow import InjectionProfile


@dataclass
class RenewableModelConfig:
    cut_in_mph: float = 7.0
    rated_mph: float = 25.0
    cut_out_mph: float = 55.0
    pv_factor: float = 1.0 / 1000.0      # per-unit output per W/m2 of GHI
    comfort_low_f: float = 65.0
    comfort_high_f: float = 75.0
    heating_slope: float = 0.012         # load increase per degF below the band
    cooling_slope: float = 0.018         # load increase per degF above the band
    min_load_factor: float = 0.2

    def __post_init__(self):
        if not (self.cut_in_mph < self.rated_mph < self.cut_out_mph):
            raise ValueError("wind curve needs cut_in < rated < cut_out")
        if self.pv_factor < 0:
            raise ValueError("pv_factor must be non-negative")
        if self.comfort_low_f > self.comfort_high_f:
            raise ValueError("comfort band is inverted")
        if self.min_load_factor <= 0:
            raise ValueError("min_load_factor must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RenewableModelConfig":
        return cls(**dict(d))


def wind_power(speed, capacity, cfg: RenewableModelConfig) -> np.ndarray:
    """Cubic ramp between cut-in and rated, flat to cut-out, zero outside."""
    v = np.asarray(speed, dtype=np.float64)
    ci, vr, co = cfg.cut_in_mph, cfg.rated_mph, cfg.cut_out_mph
    ramp = (v ** 3 - ci ** 3) / (vr ** 3 - ci ** 3)
    frac = np.where(v < ci, 0.0, np.where(v < vr, ramp, np.where(v <= co, 1.0, 0.0)))
    return frac * np.asarray(capacity, dtype=np.float64)


def pv_power(ghi, capacity, cfg: RenewableModelConfig) -> np.ndarray:
    cap = np.asarray(capacity, dtype=np.float64)
    return np.minimum(cap * cfg.pv_factor * np.asarray(ghi, dtype=np.float64), cap)


def load_factor(temperature, cfg: RenewableModelConfig) -> np.ndarray:
    """V-shaped multiplier on base load with a flat comfort band."""
    t = np.asarray(temperature, dtype=np.float64)
    heat = cfg.heating_slope * np.maximum(cfg.comfort_low_f - t, 0.0)
    cool = cfg.cooling_slope * np.maximum(t - cfg.comfort_high_f, 0.0)
    return np.maximum(1.0 + heat + cool, cfg.min_load_factor)


def _location_index(grid: GridModel) -> dict[int, int]:
    return {int(i): k for k, i in enumerate(grid.location_ids)}


def weather_to_injections(grid: GridModel, sample: WeatherSample, cfg: RenewableModelConfig,
                          mapping: np.ndarray) -> InjectionProfile:
    """Turn one weather sample into net bus injections.

    ``mapping[i]`` is the weather-location id of bus ``i`` (drives its load).
    Conventional units share the residual demand in proportion to capacity;
    the slack bus absorbs whatever the power flow leaves over.
    """
    temp = np.asarray(sample.temperature, dtype=np.float64)
    wind = np.asarray(sample.wind, dtype=np.float64)
    ghi = np.asarray(sample.ghi, dtype=np.float64)
    if np.any(wind < 0) or np.any(ghi < 0):
        raise GridError("weather sample has negative wind or GHI")
    mapping = np.asarray(mapping)
    if mapping.shape != (grid.n_bus,):
        raise GridError(f"bus mapping has shape {mapping.shape}, grid has {grid.n_bus} buses")
    loc_index = _location_index(grid)
    try:
        bus_loc = np.array([loc_index[int(m)] for m in mapping])
    except KeyError as exc:
        raise GridError(f"bus mapping references unknown location {exc}") from None
    if temp.shape[0] != len(loc_index):
        raise GridError(f"weather sample has {temp.shape[0]} locations, grid has {len(loc_index)}")

    lf = load_factor(temp[bus_loc], cfg)
    pd = grid.pd * lf
    qd = grid.qd * lf
    p = -pd
    q = -qd

    ren = np.zeros(len(grid.generators))
    conv = []
    for k, g in enumerate(grid.generators):
        if g.kind == "conventional":
            conv.append(k)
            continue
        li = loc_index[int(g.location)]
        mw = float(wind_power(wind[li], g.capacity, cfg) if g.kind == "wind" else pv_power(ghi[li], g.capacity, cfg))
        ren[k] = mw
        p[g.bus] += mw
        q[g.bus] += mw * np.tan(np.arccos(np.clip(g.pf, 0.0, 1.0)))

    residual = max(pd.sum() - ren.sum(), 0.0)
    caps = np.array([grid.generators[k].capacity for k in conv])
    if len(conv):
        share = np.minimum(residual * caps / caps.sum(), caps)
        for k, mw in zip(conv, share):
            g = grid.generators[k]
            if grid.bus_kind[g.bus] != "slack":
                p[g.bus] += mw
    return InjectionProfile(p_mw=p, q_mvar=q, vset=grid.vset.copy(), renewable_mw=ren)
