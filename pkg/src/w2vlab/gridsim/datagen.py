"""Weather -> voltage dataset generation: one AC power flow per time step."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..dataset import NexusDataset, make_splits
from ..weatherfield import WeatherSeries
from .model import GridModel
from .powerflow import PowerFlowSolution, solve_ac_power_flow
from .renewables import RenewableModelConfig, weather_to_injections

log = logging.getLogger(__name__)

VMAX_PU = 1.20


class DatasetGenerationError(RuntimeError):
    pass


def _solve_step(args) -> PowerFlowSolution:
    grid, sample, cfg, mapping, tol, max_iter = args
    inj = weather_to_injections(grid, sample, cfg, mapping)
    return solve_ac_power_flow(grid, inj, tol=tol, max_iter=max_iter)


def solve_series(grid: GridModel, series: WeatherSeries, cfg: RenewableModelConfig, mapping,
                 tol: float = 1e-8, max_iter: int = 20, workers: int = 1) -> list[PowerFlowSolution]:
    """Independent power flow per step; results are returned in time order."""
    jobs = ((grid, series.sample(i), cfg, mapping, tol, max_iter) for i in range(series.T))
    if workers <= 1:
        return [_solve_step(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_solve_step, jobs, chunksize=32))


def generate_dataset(grid: GridModel, series: WeatherSeries, cfg: RenewableModelConfig, mapping,
                     seed: int = 0, tol: float = 1e-8, max_iter: int = 20, vmax: float = VMAX_PU,
                     max_drop_fraction: float = 0.5, fit_on_full: bool = False,
                     workers: int = 1) -> NexusDataset:
    """Solve every step, drop non-converged and over-voltage steps, fit scalers.

    Raises :class:`DatasetGenerationError` when more than ``max_drop_fraction``
    of the steps are dropped.
    """
    if series.S != len(grid.location_ids):
        raise DatasetGenerationError(
            f"series has {series.S} locations but grid references {len(grid.location_ids)}")
    sols = solve_series(grid, series, cfg, mapping, tol, max_iter, workers)
    keep, filter_log = [], []
    for i, sol in enumerate(sols):
        t = int(series.time[i])
        if not sol.converged:
            filter_log.append({"time": t, "reason": "nonconverged", "max_vm": None,
                               "detail": sol.message})
        elif sol.max_vm > vmax:
            filter_log.append({"time": t, "reason": "overvoltage", "max_vm": float(sol.max_vm),
                               "detail": f"max |V| {sol.max_vm:.4f} > {vmax}"})
        else:
            keep.append(i)
    dropped = len(filter_log)
    if dropped > max_drop_fraction * series.T:
        raise DatasetGenerationError(
            f"{dropped} of {series.T} samples dropped; scenario config looks ill-posed")
    if len(keep) < 3:
        raise DatasetGenerationError(f"only {len(keep)} samples retained")
    if dropped:
        log.info("dropped %d of %d samples", dropped, series.T)
    keep_arr = np.array(keep, dtype=np.int64)
    V = np.array([sols[i].vm for i in keep])
    A = np.array([sols[i].va for i in keep])
    return NexusDataset(
        time=series.time[keep_arr],
        weather_raw=series.flat()[keep_arr],
        voltage_raw=V,
        n_locations=series.S,
        splits=make_splits(len(keep), seed),
        filter_log=filter_log,
        seed=seed,
        location_ids=series.location_ids.copy(),
        bus_ids=np.arange(grid.n_bus),
        angles_raw=A,
        fit_on_full=fit_on_full,
        all_time=series.time.copy(),
    )
