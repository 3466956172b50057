import numpy as np
import pytest

from w2vlab.gridsim import (
    Generator, GridModel, RenewableModelConfig, ReferenceGridConfig, build_reference_grid, generate_dataset,
)
from w2vlab.weatherfield import SynthWeatherConfig, generate_synthetic_series, nearest_location_mapping

SMALL_GRID = ReferenceGridConfig(n_buses=20, n_locations=4, n_conventional=3, n_wind=4, n_solar=2,
                                 area_km=200.0, seed=3)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def _dataset(grid, T, weather_seed, split_seed=0):
    series = generate_synthetic_series(SynthWeatherConfig(seed=weather_seed), grid.location_coords, T,
                                       location_ids=grid.location_ids)
    mapping = nearest_location_mapping(grid.bus_coords, grid.location_coords, grid.location_ids)
    return generate_dataset(grid, series, RenewableModelConfig(), mapping, seed=split_seed), series, mapping


@pytest.fixture(scope="session")
def small_grid():
    return build_reference_grid(SMALL_GRID)


@pytest.fixture(scope="session")
def small_bundle(small_grid):
    """(dataset, series, mapping) on the 20-bus grid, 400 hourly steps."""
    return _dataset(small_grid, 400, weather_seed=2)


@pytest.fixture(scope="session")
def small_dataset(small_bundle):
    return small_bundle[0]


@pytest.fixture(scope="session")
def desk_grid():
    return build_reference_grid()


@pytest.fixture(scope="session")
def desk_bundle(desk_grid):
    """(dataset, series, mapping) on the 100-bus reference grid, T = 2000."""
    return _dataset(desk_grid, 2000, weather_seed=1)


@pytest.fixture(scope="session")
def desk_dataset(desk_bundle):
    return desk_bundle[0]


def overvoltage_case():
    """Two buses where a rated-wind step pushes bus 1 to about 1.25 p.u."""
    return GridModel(
        bus_kind=("slack", "PQ"), pd=[0.0, 20.0], qd=[0.0, 0.0], vset=[1.0, 1.0],
        branch_from=[0], branch_to=[1], r=[0.02], x=[0.135], b=[0.0], rating=[500.0],
        generators=(Generator(0, "conventional", 500.0), Generator(1, "wind", 300.0, 0, 0.8)),
        bus_coords=[[0.0, 0.0], [1.0, 0.0]], location_coords=[[1.0, 0.0]],
    )


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
