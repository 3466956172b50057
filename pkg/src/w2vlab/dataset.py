"""Paired weather/voltage dataset with scalers, split indices and filter log.

On disk a dataset is a directory holding ``weather.csv`` (every generated
time step), ``voltage.csv`` (retained steps only) and ``metadata.json``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .weatherfield import (
    FEATURES, MinMaxScaler, WeatherSeries, feature_columns, fit_scaler, flatten_weather,
    load_weather_csv, unflatten_weather, write_weather_csv,
)

VOLTAGE_COLUMNS = ("time", "bus", "vm_pu")
SPLIT_FRACTIONS = (0.7, 0.2, 0.1)


def split_counts(n: int, fractions=SPLIT_FRACTIONS) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return n_train, n_val, n - n_train - n_val


def make_splits(n: int, seed: int, fractions=SPLIT_FRACTIONS) -> dict[str, dict[str, np.ndarray]]:
    """Random split (W2V) and chronological split (forecasters) over ``n`` positions."""
    n_train, n_val, _ = split_counts(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    chrono = np.arange(n)
    return {
        "random": {"train": np.sort(perm[:n_train]), "val": np.sort(perm[n_train:n_train + n_val]),
                   "test": np.sort(perm[n_train + n_val:])},
        "chrono": {"train": chrono[:n_train], "val": chrono[n_train:n_train + n_val],
                   "test": chrono[n_train + n_val:]},
    }


@dataclass(eq=False)
class NexusDataset:
    time: np.ndarray                 # retained time indices, ascending
    weather_raw: np.ndarray          # [T, W] physical units, feature-major
    voltage_raw: np.ndarray          # [T, B] p.u.
    n_locations: int
    splits: dict
    weather_scaler: MinMaxScaler | None = None
    voltage_scaler: MinMaxScaler | None = None
    filter_log: list = field(default_factory=list)
    seed: int = 0
    location_ids: np.ndarray | None = None
    bus_ids: np.ndarray | None = None
    angles_raw: np.ndarray | None = None
    fit_on_full: bool = False
    all_time: np.ndarray | None = None   # every generated step, including dropped ones

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=np.int64)
        self.weather_raw = np.asarray(self.weather_raw, dtype=np.float64)
        self.voltage_raw = np.asarray(self.voltage_raw, dtype=np.float64)
        if self.location_ids is None:
            self.location_ids = np.arange(self.n_locations)
        if self.bus_ids is None:
            self.bus_ids = np.arange(self.voltage_raw.shape[1])
        if self.all_time is None:
            dropped = [int(r["time"]) for r in self.filter_log]
            self.all_time = np.union1d(self.time, np.array(dropped, dtype=np.int64))
        if self.weather_scaler is None or self.voltage_scaler is None:
            self.fit_scalers(self.fit_on_full)
        self._normalize()

    def fit_scalers(self, fit_on_full: bool = False):
        rows = np.arange(len(self.time)) if fit_on_full else self.splits["random"]["train"]
        tag = "full" if fit_on_full else "train"
        self.weather_scaler = fit_scaler(self.weather_raw[rows], feature_columns(self.n_locations), tag)
        self.voltage_scaler = fit_scaler(self.voltage_raw[rows], {"voltage": np.arange(self.B)}, tag)
        self.fit_on_full = fit_on_full
        self._normalize()

    def _normalize(self):
        self.weather = self.weather_scaler.apply(self.weather_raw)
        self.voltage = self.voltage_scaler.apply(self.voltage_raw)

    @property
    def T(self) -> int:
        return len(self.time)

    @property
    def W(self) -> int:
        return self.weather_raw.shape[1]

    @property
    def B(self) -> int:
        return self.voltage_raw.shape[1]

    @property
    def N(self) -> int:
        return self.W // self.n_locations

    @property
    def dropped_times(self) -> np.ndarray:
        return np.array(sorted(int(r["time"]) for r in self.filter_log), dtype=np.int64)

    def weather_grid(self, normalized: bool = True) -> np.ndarray:
        """Weather as ``[T, S, N]``."""
        return unflatten_weather(self.weather if normalized else self.weather_raw, self.n_locations)

    def subset(self, split: str, part: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[split][part]
        return self.weather[idx], self.voltage[idx]

    # -- files ---------------------------------------------------------------
    def save(self, directory, series: WeatherSeries | None = None, extra_meta: dict | None = None) -> dict:
        """Write weather.csv / voltage.csv / metadata.json; returns the file paths."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        if series is None:
            series = WeatherSeries(unflatten_weather(self.weather_raw, self.n_locations), self.time,
                                   self.location_ids)
        paths = {"weather": write_weather_csv(series, d / "weather.csv")}
        vpath = d / "voltage.csv"
        with open(vpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(VOLTAGE_COLUMNS)
            for i, t in enumerate(self.time):
                for j, bus in enumerate(self.bus_ids):
                    w.writerow([int(t), int(bus), repr(float(self.voltage_raw[i, j]))])
        paths["voltage"] = vpath
        meta = {
            "seed": int(self.seed),
            "n_locations": int(self.n_locations),
            "features": list(FEATURES),
            "location_ids": [int(i) for i in self.location_ids],
            "bus_ids": [int(i) for i in self.bus_ids],
            "fit_on_full": bool(self.fit_on_full),
            "scalers": {"weather": self.weather_scaler.to_dict(), "voltage": self.voltage_scaler.to_dict()},
            "filter_log": self.filter_log,
            "splits": {k: {p: v.tolist() for p, v in parts.items()} for k, parts in self.splits.items()},
        }
        meta.update(extra_meta or {})
        mpath = d / "metadata.json"
        mpath.write_text(json.dumps(meta, indent=1, sort_keys=True))
        paths["metadata"] = mpath
        return paths

    @classmethod
    def load(cls, directory) -> "NexusDataset":
        d = Path(directory)
        meta = json.loads((d / "metadata.json").read_text())
        series = load_weather_csv(d / "weather.csv")
        volt: dict[int, dict[int, float]] = {}
        with open(d / "voltage.csv", newline="") as fh:
            for rec in csv.DictReader(fh):
                volt.setdefault(int(rec["time"]), {})[int(rec["bus"])] = float(rec["vm_pu"])
        times = np.array(sorted(volt), dtype=np.int64)
        bus_ids = np.array(meta["bus_ids"], dtype=np.int64)
        V = np.array([[volt[t][int(b)] for b in bus_ids] for t in times])
        pos = {int(t): i for i, t in enumerate(series.time)}
        Wf = flatten_weather(series.data[[pos[int(t)] for t in times]])
        return cls(
            time=times, weather_raw=Wf, voltage_raw=V, n_locations=int(meta["n_locations"]),
            splits={k: {p: np.array(v, dtype=np.int64) for p, v in parts.items()}
                    for k, parts in meta["splits"].items()},
            weather_scaler=MinMaxScaler.from_dict(meta["scalers"]["weather"]),
            voltage_scaler=MinMaxScaler.from_dict(meta["scalers"]["voltage"]),
            filter_log=meta["filter_log"], seed=int(meta["seed"]),
            location_ids=np.array(meta["location_ids"]), bus_ids=bus_ids,
            fit_on_full=bool(meta["fit_on_full"]), all_time=series.time.copy(),
        )
