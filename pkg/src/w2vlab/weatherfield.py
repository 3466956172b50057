"""Synthetic weather fields, weather CSV I/O, min-max scaling and bus mapping.

Weather arrays are laid out ``[T, S, N]`` with features in :data:`FEATURES`
order. Flattened vectors (the W2V input) are feature-major: all ``S``
temperatures, then all wind speeds, then all GHI values.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

FEATURES = ("temperature", "wind", "ghi")
UNITS = {"temperature": "degF", "wind": "mph", "ghi": "W/m2"}
WEATHER_COLUMNS = ("time", "location", "temperature_f", "wind_mph", "ghi_wm2")


class WeatherConfigError(ValueError):
    pass


class WeatherParseError(ValueError):
    pass


class ScalerError(ValueError):
    pass


def flatten_weather(x: np.ndarray) -> np.ndarray:
    """``[..., S, N]`` -> ``[..., N*S]`` (feature-major)."""
    x = np.asarray(x)
    return np.swapaxes(x, -1, -2).reshape(*x.shape[:-2], x.shape[-1] * x.shape[-2])


def unflatten_weather(w: np.ndarray, n_locations: int) -> np.ndarray:
    """Inverse of :func:`flatten_weather`."""
    w = np.asarray(w)
    n_feat = w.shape[-1] // n_locations
    return np.swapaxes(w.reshape(*w.shape[:-1], n_feat, n_locations), -1, -2)


def feature_columns(n_locations: int, features: Sequence[str] = FEATURES) -> dict[str, np.ndarray]:
    """Column indices of each feature block in the flattened layout."""
    return {f: np.arange(i * n_locations, (i + 1) * n_locations) for i, f in enumerate(features)}


@dataclass(frozen=True)
class WeatherSample:
    temperature: np.ndarray
    wind: np.ndarray
    ghi: np.ndarray

    def __post_init__(self):
        for name in ("wind", "ghi"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"negative {name} value in weather sample")

    @property
    def n_locations(self) -> int:
        return len(self.temperature)

    def as_array(self) -> np.ndarray:
        return np.stack([self.temperature, self.wind, self.ghi], axis=-1)


@dataclass(frozen=True, eq=False)
class WeatherSeries:
    data: np.ndarray            # [T, S, N]
    time: np.ndarray            # hourly integer time index, length T
    location_ids: np.ndarray    # length S
    coords: np.ndarray | None = None   # [S, 2] km

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] != len(FEATURES):
            raise ValueError(f"weather data must be [T, S, {len(FEATURES)}], got {data.shape}")
        time = np.array(self.time, dtype=np.int64)
        if len(time) != data.shape[0]:
            raise ValueError("time index length does not match data")
        if len(time) > 1 and np.any(np.diff(time) != time[1] - time[0]):
            raise ValueError("weather series must have a uniform time step")
        ids = np.array(self.location_ids, dtype=np.int64)
        for arr in (data, time, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "location_ids", ids)
        if self.coords is not None:
            c = np.array(self.coords, dtype=np.float64)
            c.setflags(write=False)
            object.__setattr__(self, "coords", c)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def S(self) -> int:
        return self.data.shape[1]

    @property
    def N(self) -> int:
        return self.data.shape[2]

    @property
    def W(self) -> int:
        return self.N * self.S

    def sample(self, i: int) -> WeatherSample:
        d = self.data[i]
        return WeatherSample(d[:, 0].copy(), d[:, 1].copy(), d[:, 2].copy())

    def flat(self) -> np.ndarray:
        return flatten_weather(self.data)

    def equals(self, other: "WeatherSeries", atol: float = 0.0) -> bool:
        return (
            self.data.shape == other.data.shape
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.location_ids, other.location_ids)
            and np.allclose(self.data, other.data, rtol=0.0, atol=atol)
        )


# -- synthetic generation -----------------------------------------------------
@dataclass
class SynthWeatherConfig:
    length_scale_km: float = 150.0
    seed: int = 0
    # temperature, degF
    temp_mean: float = 62.0
    temp_seasonal_amp: float = 12.0
    seasonal_period_h: float = 8760.0
    temp_diurnal_amp: float = 9.0
    temp_spatial_gradient: float = 3.0     # degF per 100 km along y
    temp_noise_std: float = 5.0
    temp_persistence: float = 0.97
    # wind, mph
    wind_mean: float = 15.0
    wind_spatial_std: float = 2.5
    wind_noise_std: float = 4.0
    wind_persistence: float = 0.9
    ramp_rate_per_h: float = 1.0 / 60.0
    ramp_drop_mph: float = 9.0
    ramp_drop_hours: int = 4
    ramp_rise_hours: int = 3
    ramp_overshoot: float = 0.6
    # GHI, W/m2
    ghi_peak: float = 900.0
    cloud_persistence: float = 0.95
    cloud_noise_std: float = 1.0
    cloud_depth: float = 0.75
    day_start_hour: int = 6
    day_hours: int = 12

    def validate(self):
        if not (self.length_scale_km > 0):
            raise WeatherConfigError(f"length_scale_km must be > 0, got {self.length_scale_km}")
        for name in ("temp_persistence", "wind_persistence", "cloud_persistence"):
            a = getattr(self, name)
            if not (0.0 <= a < 1.0):
                raise WeatherConfigError(f"{name} must lie in [0, 1), got {a}")
        for name in ("temp_noise_std", "wind_noise_std", "cloud_noise_std", "wind_spatial_std"):
            if getattr(self, name) < 0:
                raise WeatherConfigError(f"{name} must be non-negative")
        if self.ramp_rate_per_h < 0:
            raise WeatherConfigError("ramp_rate_per_h must be non-negative")
        if not (0 < self.day_hours < 24):
            raise WeatherConfigError("day_hours must lie in (0, 24)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthWeatherConfig":
        return cls(**dict(d))


def spatial_factor(coords: np.ndarray, length_scale: float) -> np.ndarray:
    """Matrix ``F`` with ``F @ F.T = exp(-d / length_scale)``.

    An infinite length-scale gives the rank-1 limit: every location receives
    the same draw.
    """
    coords = np.asarray(coords, dtype=np.float64)
    S = len(coords)
    if math.isinf(length_scale):
        F = np.zeros((S, S))
        F[:, 0] = 1.0
        return F
    d = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1))
    C = np.exp(-d / length_scale)
    vals, vecs = np.linalg.eigh(C)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def ghi_envelope(hour_of_day: np.ndarray, cfg: SynthWeatherConfig) -> np.ndarray:
    """Clear-sky shape: positive for ``day_hours`` steps from ``day_start_hour``, else 0."""
    h = np.asarray(hour_of_day) % 24
    rel = h - cfg.day_start_hour
    day = (rel >= 0) & (rel < cfg.day_hours)
    return np.where(day, cfg.ghi_peak * np.sin(np.pi * (rel + 0.5) / cfg.day_hours), 0.0)


def ramp_profile(cfg: SynthWeatherConfig, T: int, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    """System-wide wind offset: Poisson-timed drops followed by rises."""
    offset = np.zeros(T)
    starts: list[int] = []
    if cfg.ramp_rate_per_h <= 0:
        return offset, starts
    drop, rise = cfg.ramp_drop_hours, cfg.ramp_rise_hours
    shape = np.concatenate([
        -cfg.ramp_drop_mph * np.arange(1, drop + 1) / drop,
        -cfg.ramp_drop_mph + (1.0 + cfg.ramp_overshoot) * cfg.ramp_drop_mph * np.arange(1, rise + 1) / rise,
        cfg.ramp_overshoot * cfg.ramp_drop_mph * np.linspace(1.0, 0.0, rise + 2)[1:-1],
    ])
    t = rng.exponential(1.0 / cfg.ramp_rate_per_h)
    while t < T:
        s = int(t)
        starts.append(s)
        seg = shape[: max(0, min(len(shape), T - s))]
        offset[s:s + len(seg)] += seg
        t += len(shape) + rng.exponential(1.0 / cfg.ramp_rate_per_h)
    return offset, starts


def _ar1(F: np.ndarray, a: float, std: float, T: int, rng: np.random.Generator) -> np.ndarray:
    S = F.shape[0]
    innov = rng.standard_normal((T, S)) @ F.T
    out = np.empty((T, S))
    out[0] = std * innov[0]
    c = std * math.sqrt(1.0 - a * a)
    for t in range(1, T):
        out[t] = a * out[t - 1] + c * innov[t]
    return out


def generate_synthetic_series(cfg: SynthWeatherConfig, locations: np.ndarray, T: int,
                              location_ids: Sequence[int] | None = None,
                              start_hour: int = 0) -> WeatherSeries:
    """Hourly temperature / wind / GHI at ``locations`` (``[S, 2]`` km)."""
    cfg.validate()
    if T < 1:
        raise WeatherConfigError("T must be >= 1")
    coords = np.asarray(locations, dtype=np.float64)
    if coords.ndim != 2 or len(coords) < 1:
        raise WeatherConfigError("need at least one location with (x, y) coordinates")
    S = len(coords)
    rng = np.random.default_rng(cfg.seed)
    F = spatial_factor(coords, cfg.length_scale_km)
    time = np.arange(start_hour, start_hour + T)
    hour = time % 24

    # temperature
    seasonal = cfg.temp_seasonal_amp * np.sin(2 * np.pi * time / cfg.seasonal_period_h)
    diurnal = cfg.temp_diurnal_amp * np.sin(2 * np.pi * (hour - 9) / 24.0)
    gradient = -cfg.temp_spatial_gradient * (coords[:, 1] - coords[:, 1].mean()) / 100.0
    temp_noise = _ar1(F, cfg.temp_persistence, cfg.temp_noise_std, T, rng)
    temperature = cfg.temp_mean + (seasonal + diurnal)[:, None] + gradient[None, :] + temp_noise

    # wind
    mean_field = cfg.wind_mean + cfg.wind_spatial_std * (F @ rng.standard_normal(S))
    wind_noise = _ar1(F, cfg.wind_persistence, cfg.wind_noise_std, T, rng)
    ramps, _ = ramp_profile(cfg, T, rng)
    wind = np.maximum(mean_field[None, :] + wind_noise + ramps[:, None], 0.0)

    # irradiance
    cloud_latent = _ar1(F, cfg.cloud_persistence, cfg.cloud_noise_std, T, rng)
    cloud = 1.0 - cfg.cloud_depth / (1.0 + np.exp(-(cloud_latent - 0.5)))
    ghi = ghi_envelope(hour, cfg)[:, None] * cloud

    data = np.stack([temperature, wind, ghi], axis=-1)
    ids = np.arange(S) if location_ids is None else np.asarray(location_ids)
    return WeatherSeries(data=data, time=time, location_ids=ids, coords=coords)


# -- CSV I/O ------------------------------------------------------------------
def write_weather_csv(series: WeatherSeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(WEATHER_COLUMNS)
        for i, t in enumerate(series.time):
            for j, loc in enumerate(series.location_ids):
                temp, wind, ghi = series.data[i, j]
                w.writerow([int(t), int(loc), repr(float(temp)), repr(float(wind)), repr(float(ghi))])
    return path


def load_weather_csv(path, coords: np.ndarray | None = None) -> WeatherSeries:
    """Read ``weather.csv``; ``u_wind``/``v_wind`` columns replace ``wind_mph`` if present."""
    rows: dict[int, dict[int, tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        directional = {"u_wind", "v_wind"} <= cols
        needed = {"time", "location", "temperature_f", "ghi_wm2"}
        if not needed <= cols or not (directional or "wind_mph" in cols):
            raise WeatherParseError(f"{path}: missing columns; have {sorted(cols)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                t = int(rec["time"])
                loc = int(rec["location"])
                temp = float(rec["temperature_f"])
                if directional:
                    wind = math.hypot(float(rec["u_wind"]), float(rec["v_wind"]))
                else:
                    wind = float(rec["wind_mph"])
                ghi = float(rec["ghi_wm2"])
            except (TypeError, ValueError) as exc:
                raise WeatherParseError(f"{path}:{lineno}: {exc}") from None
            rows.setdefault(t, {})[loc] = (temp, wind, ghi)
    if not rows:
        raise WeatherParseError(f"{path}: no data rows")
    times = sorted(rows)
    loc_ids = sorted(rows[times[0]])
    for t in times:
        if sorted(rows[t]) != loc_ids:
            raise WeatherParseError(f"{path}: location set at time {t} differs from time {times[0]}")
    data = np.array([[rows[t][loc] for loc in loc_ids] for t in times], dtype=np.float64)
    return WeatherSeries(data=data, time=np.array(times), location_ids=np.array(loc_ids), coords=coords)


# -- bus mapping --------------------------------------------------------------
def nearest_location_mapping(bus_coords, location_coords, location_ids: Sequence[int] | None = None) -> np.ndarray:
    """Location id nearest to each bus (Euclidean); ties go to the lowest id."""
    bus = np.asarray(bus_coords, dtype=np.float64)
    loc = np.asarray(location_coords, dtype=np.float64)
    ids = np.arange(len(loc)) if location_ids is None else np.asarray(location_ids)
    order = np.argsort(ids, kind="stable")
    loc, ids = loc[order], ids[order]
    d2 = ((bus[:, None, :] - loc[None, :, :]) ** 2).sum(-1)
    return ids[np.argmin(d2, axis=1)]


# -- min-max scaling ----------------------------------------------------------
@dataclass
class MinMaxScaler:
    """Affine map of each column group onto [0, 1] using the group's extremes."""

    group_names: list[str]
    group_columns: list[np.ndarray]
    mins: np.ndarray
    maxs: np.ndarray
    fitted_on: str = "train"
    n_columns: int = field(default=0)

    def __post_init__(self):
        self.group_columns = [np.asarray(c, dtype=np.int64) for c in self.group_columns]
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if not self.n_columns:
            self.n_columns = int(max(int(c.max()) for c in self.group_columns) + 1)
        lo = np.zeros(self.n_columns)
        span = np.ones(self.n_columns)
        for g, cols in enumerate(self.group_columns):
            lo[cols] = self.mins[g]
            span[cols] = self.maxs[g] - self.mins[g]
        self._lo, self._span = lo, span

    def column_span(self) -> np.ndarray:
        return self._span.copy()

    def group(self, name: str) -> tuple[float, float]:
        g = self.group_names.index(name)
        return float(self.mins[g]), float(self.maxs[g])

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_columns:
            raise ScalerError(f"expected last axis {self.n_columns}, got {x.shape[-1]}")
        return (x - self._lo) / self._span

    def invert(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_columns:
            raise ScalerError(f"expected last axis {self.n_columns}, got {x.shape[-1]}")
        return x * self._span + self._lo

    transform = apply

    def to_dict(self) -> dict:
        return {
            "group_names": list(self.group_names),
            "group_columns": [c.tolist() for c in self.group_columns],
            "mins": [float(v) for v in self.mins],
            "maxs": [float(v) for v in self.maxs],
            "fitted_on": self.fitted_on,
            "n_columns": self.n_columns,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MinMaxScaler":
        return cls(list(d["group_names"]), [np.array(c) for c in d["group_columns"]],
                   np.array(d["mins"]), np.array(d["maxs"]), d.get("fitted_on", "train"),
                   int(d.get("n_columns", 0)))


def fit_scaler(data: np.ndarray, grouping: Mapping[str, Sequence[int]], fitted_on: str = "train") -> MinMaxScaler:
    """Fit group-wise min/max on rows of ``data`` (``[n, columns]``)."""
    data = np.asarray(data, dtype=np.float64)
    names, cols, mins, maxs = [], [], [], []
    for name, c in grouping.items():
        c = np.asarray(c, dtype=np.int64)
        block = data[:, c]
        lo, hi = float(block.min()), float(block.max())
        if not hi > lo:
            raise ScalerError(f"scaler group {name!r} is constant ({lo}); cannot min-max scale")
        names.append(name)
        cols.append(c)
        mins.append(lo)
        maxs.append(hi)
    return MinMaxScaler(names, cols, np.array(mins), np.array(maxs), fitted_on, data.shape[1])
