import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2vlab.weatherfield import (
    FEATURES, ScalerError, SynthWeatherConfig, WeatherConfigError, WeatherParseError, WeatherSeries,
    feature_columns, fit_scaler, flatten_weather, generate_synthetic_series, ghi_envelope, load_weather_csv,
    nearest_location_mapping, spatial_factor, unflatten_weather, write_weather_csv,
)

LOCS = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 120.0], [200.0, 200.0], [90.0, 30.0]])


def test_ghi_zero_at_midnight_and_night():
    cfg = SynthWeatherConfig(seed=4)
    s = generate_synthetic_series(cfg, LOCS, 24 * 20)
    ghi = s.data[:, :, 2]
    hours = s.time % 24
    assert np.all(ghi[hours == 0] == 0.0)
    night = ghi_envelope(hours, cfg) == 0.0
    assert np.all(ghi[night] == 0.0) and night.sum() == 12 * 20
    assert np.all(ghi >= 0) and np.all(s.data[:, :, 1] >= 0)


def test_infinite_length_scale_shares_noise():
    F = spatial_factor(LOCS, float("inf"))
    z = np.random.default_rng(0).standard_normal(len(LOCS))
    draw = F @ z
    assert np.all(draw == draw[0])
    assert np.linalg.matrix_rank(F @ F.T) == 1


def test_spatial_factor_reproduces_kernel():
    F = spatial_factor(LOCS, 150.0)
    d = np.sqrt(((LOCS[:, None] - LOCS[None]) ** 2).sum(-1))
    np.testing.assert_allclose(F @ F.T, np.exp(-d / 150.0), atol=1e-12)


def test_temperature_correlogram_matches_kernel():
    # pure noise: remove deterministic terms so the empirical correlation isolates the kernel
    ell = 150.0
    cfg = SynthWeatherConfig(seed=11, length_scale_km=ell, temp_seasonal_amp=0.0, temp_diurnal_amp=0.0,
                             temp_spatial_gradient=0.0, temp_persistence=0.0)
    s = generate_synthetic_series(cfg, LOCS, 2000)
    emp = np.corrcoef(s.data[:, :, 0].T)
    d = np.sqrt(((LOCS[:, None] - LOCS[None]) ** 2).sum(-1))
    assert np.max(np.abs(emp - np.exp(-d / ell))) <= 0.1


def test_generation_deterministic_per_seed():
    a = generate_synthetic_series(SynthWeatherConfig(seed=5), LOCS, 100)
    b = generate_synthetic_series(SynthWeatherConfig(seed=5), LOCS, 100)
    c = generate_synthetic_series(SynthWeatherConfig(seed=6), LOCS, 100)
    assert np.array_equal(a.data, b.data) and not np.array_equal(a.data, c.data)


@pytest.mark.parametrize("kw", [{"length_scale_km": 0.0}, {"length_scale_km": -1.0},
                                {"wind_persistence": 1.0}, {"temp_persistence": -0.1}])
def test_config_errors(kw):
    with pytest.raises(WeatherConfigError):
        generate_synthetic_series(SynthWeatherConfig(**kw), LOCS, 10)


def test_ramps_present():
    s = generate_synthetic_series(SynthWeatherConfig(seed=1, ramp_rate_per_h=1 / 40), LOCS, 2000)
    mean_wind = s.data[:, :, 1].mean(1)
    assert np.ptp(mean_wind) > 10.0


def test_flatten_layout_is_feature_major():
    x = np.arange(2 * 4 * 3).reshape(2, 4, 3)
    w = flatten_weather(x)
    assert w.shape == (2, 12)
    assert w[0, :4].tolist() == x[0, :, 0].tolist()
    assert np.array_equal(unflatten_weather(w, 4), x)
    cols = feature_columns(4)
    assert cols["wind"].tolist() == [4, 5, 6, 7]


# -- CSV --------------------------------------------------------------------------------
def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_uv_components_combine(tmp_path):
    p = tmp_path / "w.csv"
    write_rows(p, ["time", "location", "temperature_f", "u_wind", "v_wind", "ghi_wm2"],
               [[0, 0, 70, 3, 4, 100], [1, 0, 71, 0, 0, 0]])
    s = load_weather_csv(p)
    assert s.data[0, 0, 1] == 5.0 and s.data[1, 0, 1] == 0.0


def test_direct_wind_passthrough(tmp_path):
    p = tmp_path / "w.csv"
    write_rows(p, ["time", "location", "temperature_f", "wind_mph", "ghi_wm2"],
               [[0, 1, 70, 12.5, 100], [0, 0, 65, 3.25, 90]])
    s = load_weather_csv(p)
    assert s.location_ids.tolist() == [0, 1]
    assert s.data[0, :, 1].tolist() == [3.25, 12.5]


def test_ragged_locations_name_time(tmp_path):
    p = tmp_path / "w.csv"
    write_rows(p, ["time", "location", "temperature_f", "wind_mph", "ghi_wm2"],
               [[0, 0, 70, 1, 0], [0, 1, 70, 1, 0], [1, 0, 70, 1, 0]])
    with pytest.raises(WeatherParseError, match="time 1"):
        load_weather_csv(p)


def test_missing_columns(tmp_path):
    p = tmp_path / "w.csv"
    write_rows(p, ["time", "location", "temperature_f"], [[0, 0, 70]])
    with pytest.raises(WeatherParseError, match="missing"):
        load_weather_csv(p)


def test_csv_roundtrip(tmp_path):
    s = generate_synthetic_series(SynthWeatherConfig(seed=3), LOCS, 50, location_ids=[4, 7, 9, 10, 12])
    back = load_weather_csv(write_weather_csv(s, tmp_path / "w.csv"))
    assert back.equals(s, atol=1e-9)


def test_series_requires_uniform_step():
    with pytest.raises(ValueError, match="uniform"):
        WeatherSeries(np.zeros((3, 1, 3)), [0, 1, 3], [0])


# -- mapping ----------------------------------------------------------------------------
def test_mapping_examples():
    locs = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 0.0], [5.0, 5.0], [99.0, 99.0], [10.0, 0.0]])
    ids = [0, 1, 9, 3, 4, 2]
    assert nearest_location_mapping([[5.0, 5.0]], locs, ids).tolist() == [3]
    # (5, 0) is equidistant to ids 0, 9 (at origin) and ids 1, 2 (at (10, 0))
    assert nearest_location_mapping([[5.0, 0.0]], locs, ids).tolist() == [0]
    # equidistant to ids 2 and 5 only
    two = np.array([[0.0, 0.0], [4.0, 0.0]])
    assert nearest_location_mapping([[2.0, 0.0]], two, [5, 2]).tolist() == [2]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), nb=st.integers(1, 20), nl=st.integers(1, 8))
def test_mapping_matches_exhaustive_scan(seed, nb, nl):
    rng = np.random.default_rng(seed)
    bus = rng.integers(0, 6, size=(nb, 2)).astype(float)      # integer grid produces ties
    loc = rng.integers(0, 6, size=(nl, 2)).astype(float)
    ids = rng.permutation(100)[:nl]
    got = nearest_location_mapping(bus, loc, ids)
    for j, b in enumerate(bus):
        best = None
        for lid, c in zip(ids, loc):
            d = (b[0] - c[0]) ** 2 + (b[1] - c[1]) ** 2
            if best is None or d < best[0] or (d == best[0] and lid < best[1]):
                best = (d, lid)
        assert got[j] == best[1]


# -- scaler -----------------------------------------------------------------------------
def test_scaler_example_and_constant_group():
    sc = fit_scaler(np.array([[2.0], [4.0], [6.0]]), {"x": [0]})
    assert sc.apply(np.array([[2.0], [4.0], [6.0]])).ravel().tolist() == [0.0, 0.5, 1.0]
    with pytest.raises(ScalerError, match="'c'"):
        fit_scaler(np.array([[1.0, 3.0], [1.0, 4.0]]), {"c": [0], "d": [1]})


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_scaler_inverse_identity(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(50, 20, size=(30, 6))
    sc = fit_scaler(x, {"a": [0, 1, 2], "b": [3, 4, 5]})
    np.testing.assert_allclose(sc.invert(sc.apply(x)), x, rtol=0, atol=1e-12)
    y = sc.apply(x)
    assert y.min() == 0.0 and y.max() == 1.0


def test_denormalized_rmse_equals_raw_rmse():
    rng = np.random.default_rng(0)
    raw_t = rng.normal(70, 10, size=(40, 3))
    raw_p = raw_t + rng.normal(0, 2, size=raw_t.shape)
    sc = fit_scaler(raw_t, {"temperature": [0, 1, 2]})
    back = sc.invert(sc.apply(raw_p))
    rmse = lambda a, b: np.sqrt(np.mean((a - b) ** 2))
    assert rmse(back, raw_t) == pytest.approx(rmse(raw_p, raw_t), rel=1e-12)
    # in the normalized space the RMSE is the physical RMSE divided by the group span
    lo, hi = sc.group("temperature")
    assert rmse(sc.apply(raw_p), sc.apply(raw_t)) * (hi - lo) == pytest.approx(rmse(raw_p, raw_t), rel=1e-12)


def test_scaler_dict_roundtrip():
    sc = fit_scaler(np.random.default_rng(1).normal(size=(10, 6)), feature_columns(2, FEATURES))
    again = type(sc).from_dict(sc.to_dict())
    x = np.ones((2, 6))
    assert np.array_equal(again.apply(x), sc.apply(x))
