"""Synthetic grids, weather-dependent injections, AC/DC power flow, dataset generation."""
from .model import Generator, GridError, GridModel, ReferenceGridConfig, build_reference_grid, two_bus_case
from .powerflow import (
    DCFlowResult, InjectionProfile, PowerFlowSolution, branch_flows_mw, mismatch,
    solve_ac_power_flow, solve_dc_power_flow, two_bus_congestion,
)
from .renewables import RenewableModelConfig, load_factor, pv_power, weather_to_injections, wind_power
from .datagen import VMAX_PU, DatasetGenerationError, generate_dataset, solve_series

__all__ = [
    "Generator", "GridError", "GridModel", "ReferenceGridConfig", "build_reference_grid", "two_bus_case",
    "DCFlowResult", "InjectionProfile", "PowerFlowSolution", "branch_flows_mw", "mismatch",
    "solve_ac_power_flow", "solve_dc_power_flow", "two_bus_congestion", "RenewableModelConfig", "load_factor", "pv_power",
    "weather_to_injections", "wind_power", "VMAX_PU", "DatasetGenerationError", "generate_dataset",
    "solve_series",
]
