import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from w2vlab.evalkit import (
    bin_index, bus_error_histogram, compute_metrics, hybrid_forecast, hybrid_input_analysis,
    large_error_analysis, pct_change, per_bus_rmse, per_sample_voltage_rmse, rmse, run_sweep, top_fraction,
    weather_bin_analysis, write_bins, write_bus_histogram, write_hybrid, write_metrics, write_sweep,
)
from w2vlab.weatherfield import FEATURES, MinMaxScaler

WEATHER = MinMaxScaler(list(FEATURES), [[0], [1], [2]], [30.0, 0.0, 0.0], [90.0, 40.0, 1000.0])
VOLTAGE = MinMaxScaler(["voltage"], [[0]], [0.9], [1.1])


def fake(n=40, h=2, S=3, B=5, seed=0):
    rng = np.random.default_rng(seed)
    yt = rng.uniform(size=(n, h, S, 3))
    yp = np.clip(yt + rng.normal(0, 0.05, size=yt.shape), 0, 1)
    vt = rng.uniform(size=(n, h, B))
    vp = vt + rng.normal(0, 0.02, size=vt.shape)
    return yp, yt, vp, vt


def loop_rmse(pred, true, lo, hi):
    """Two-pass scalar RMSE over de-normalized values."""
    p, t = np.ravel(pred), np.ravel(true)
    acc = 0.0
    for a, b in zip(p, t):
        acc += ((a * (hi - lo) + lo) - (b * (hi - lo) + lo)) ** 2
    return math.sqrt(acc / len(p))


# -- metrics -------------------------------------------------------------------------
def test_perfect_predictions_give_zero():
    _, yt, _, vt = fake()
    rep = compute_metrics(yt, yt, WEATHER, vt, vt, VOLTAGE)
    assert all(v == 0.0 for v in rep.weather_rmse.values())
    assert rep.voltage_rmse == 0.0 and rep.voltage_mae == 0.0 and rep.weather_rmse_norm == 0.0


def test_constant_wind_error_is_one_mph():
    _, yt, _, _ = fake()
    yp = yt.copy()
    yp[..., 1] += 1.0 / 40.0
    rep = compute_metrics(yp, yt, WEATHER)
    assert rep.weather_rmse["wind"] == pytest.approx(1.0, abs=1e-12)
    assert rep.weather_rmse["temperature"] == 0.0


def test_metrics_match_scalar_oracle():
    yp, yt, vp, vt = fake()
    rep = compute_metrics(yp, yt, WEATHER, vp, vt, VOLTAGE)
    for n, f in enumerate(FEATURES):
        lo, hi = WEATHER.group(f)
        assert rep.weather_rmse[f] == pytest.approx(loop_rmse(yp[..., n], yt[..., n], lo, hi), abs=1e-12)
    assert rep.voltage_rmse == pytest.approx(loop_rmse(vp, vt, 0.9, 1.1), abs=1e-12)
    mae = sum(abs(a - b) * 0.2 for a, b in zip(vp.ravel(), vt.ravel())) / vp.size
    assert rep.voltage_mae == pytest.approx(mae, abs=1e-12)
    for j, row in enumerate(rep.per_horizon):
        assert row["rmse_voltage"] == pytest.approx(loop_rmse(vp[:, j], vt[:, j], 0.9, 1.1), abs=1e-12)
    assert rep.n_samples == len(yp)


def test_metrics_errors():
    yp, yt, vp, vt = fake()
    with pytest.raises(ValueError):
        compute_metrics(yp, yt[:3], WEATHER)
    with pytest.raises(ValueError, match="scaler"):
        compute_metrics(yp, yt, None)
    with pytest.raises(ValueError, match="voltage scaler"):
        compute_metrics(yp, yt, WEATHER, vp, vt, None)
    with pytest.raises(ValueError):
        compute_metrics(yp, yt, WEATHER, vp, vt, WEATHER)  # no "voltage" group


def test_write_metrics_columns(tmp_path):
    yp, yt, vp, vt = fake()
    path = write_metrics(compute_metrics(yp, yt, WEATHER, vp, vt, VOLTAGE), tmp_path / "m.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["metric", "unit", "value"]
    assert all(float(r[2]) >= 0 for r in rows[1:] if r[2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_non_negative(seed):
    yp, yt, vp, vt = fake(n=6, seed=seed)
    rep = compute_metrics(yp, yt, WEATHER, vp, vt, VOLTAGE)
    assert min(rep.weather_rmse.values()) >= 0 and rep.voltage_rmse >= 0 and rep.voltage_mae >= 0


# -- sweeps ----------------------------------------------------------------------------
def quadratic_trainer(calls=None):
    """Deterministic stand-in for training: L_v falls then rises with the weight, L_w rises."""
    def train(w):
        if calls is not None:
            calls.append(w)
        return {"L_v": 1.0 - 0.2 * w + 0.05 * w * w, "L_w": 1.0 + 0.01 * w * w}
    return train


def test_baseline_candidate_has_zero_change():
    res = run_sweep("gamma", [0.0, 1.0], quadratic_trainer())
    row = res.row(0.0)
    assert row["dL_v_pct"] == 0.0 and row["dL_w_pct"] == 0.0


def test_gamma_selection_respects_cap():
    res = run_sweep("gamma", [1.0, 2.0, 3.0, 4.0], quadratic_trainer(), cap=0.05)
    # L_w change is w^2 %, so only w <= 2 is feasible; L_v is lowest at w = 2 among those
    assert res.selected == 2.0
    assert [r["feasible"] for r in res.rows] == [True, True, False, False]
    assert "5%" in res.rationale


def test_lambda_roles_swap():
    train = lambda w: {"L_w": 1.0 - 0.1 * w, "L_v": 1.0 + 0.02 * w}
    res = run_sweep("lambda", [0.5, 1.0, 2.0, 4.0], train, cap=0.05)
    assert res.selected == 2.0     # 4.0 raises L_v by 8%


@pytest.mark.parametrize("perm", list(itertools.permutations([1.0, 1.78, 3.16, 5.62])))
def test_selection_invariant_to_candidate_order(perm):
    ref = run_sweep("gamma", [1.0, 1.78, 3.16, 5.62], quadratic_trainer(), cap=0.2)
    res = run_sweep("gamma", list(perm), quadratic_trainer(), cap=0.2)
    assert res.selected == ref.selected and res.rows == ref.rows


def test_failed_candidate_is_recorded_and_sweep_continues():
    def train(w):
        if w == 2.0:
            raise FloatingPointError("loss became NaN")
        return quadratic_trainer()(w)
    res = run_sweep("gamma", [1.0, 2.0, 3.0], train, cap=1.0)
    bad = res.row(2.0)
    assert bad["failed"] and "NaN" in bad["error"]
    assert res.selected in (1.0, 3.0)


def test_no_feasible_candidate_selects_none():
    res = run_sweep("gamma", [5.0, 10.0], quadratic_trainer(), cap=0.01)
    assert res.selected is None


def test_cached_rows_are_not_retrained():
    calls = []
    train = quadratic_trainer(calls)
    first = run_sweep("gamma", [1.0, 3.0], train)
    run_sweep("gamma", [1.0, 2.0, 3.0], train, first.baseline, cache=first)
    assert calls == [0.0, 1.0, 3.0, 2.0]


def test_sweep_errors_and_csv(tmp_path):
    with pytest.raises(ValueError):
        run_sweep("beta", [1.0], quadratic_trainer())
    res = run_sweep("gamma", [1.0, 2.0], quadratic_trainer())
    rows = list(csv.DictReader(open(write_sweep(res, tmp_path / "s.csv"))))
    assert rows[0]["status"] == "baseline" and float(rows[0]["dL_v_pct"]) == 0.0
    for r in rows[1:]:
        recomputed = pct_change(float(r["L_v"]), float(rows[0]["L_v"]))
        assert float(r["dL_v_pct"]) == pytest.approx(recomputed, abs=1e-9)


def test_pct_change_sign_convention():
    assert pct_change(0.9, 1.0) == pytest.approx(-10.0)
    assert pct_change(1.1, 1.0) == pytest.approx(10.0)
    assert pct_change(0.0, 0.0) == 0.0 and math.isnan(pct_change(1.0, 0.0))


# -- hybrid substitution -------------------------------------------------------------
def linear_surrogate(weights):
    """Voltage = fixed linear map of the flattened per-step weather."""
    def fn(fc):
        n, h, S, N = fc.shape
        rows = fc.transpose(0, 1, 3, 2).reshape(n * h, N * S)
        return (rows @ weights).reshape(n, h, -1)
    return fn


def test_hybrid_identities():
    rng = np.random.default_rng(0)
    gu, truth, _, _ = fake(n=30, seed=1)
    ga = truth + rng.normal(0, 0.01, size=truth.shape)
    fn = linear_surrogate(rng.normal(size=(9, 4)) * 0.1)
    targets = fn(truth)
    tab = hybrid_input_analysis(gu, ga, fn, targets, VOLTAGE)
    t = tab.by_name()
    tv = targets * 0.2 + 0.9
    assert abs(t["none"]["voltage_rmse"] - rmse(fn(gu) * 0.2 + 0.9, tv)) <= 1e-12
    assert abs(t["all"]["voltage_rmse"] - rmse(fn(ga) * 0.2 + 0.9, tv)) <= 1e-12
    assert t["none"]["voltage_rmse"] == tab.gu_rmse and t["all"]["voltage_rmse"] == tab.ga_rmse
    assert [r["substituted"] for r in tab.rows] == ["none", *FEATURES, "all"]


def test_hybrid_finds_the_voltage_driving_feature():
    rng = np.random.default_rng(3)
    gu, truth, _, _ = fake(n=50, seed=2)
    ga = truth.copy()
    w = np.zeros((9, 4))
    w[3:6] = rng.normal(size=(3, 4))       # only wind (feature 1) drives voltage
    tab = hybrid_input_analysis(gu, ga, linear_surrogate(w), linear_surrogate(w)(truth), VOLTAGE)
    single = {r["substituted"]: r["delta_pct"] for r in tab.rows if r["substituted"] in FEATURES}
    assert min(single, key=single.get) == "wind"
    assert single["temperature"] == pytest.approx(0.0, abs=1e-9)


def test_hybrid_forecast_copies_only_selected_features():
    gu, ga = np.zeros((2, 1, 2, 3)), np.ones((2, 1, 2, 3))
    out = hybrid_forecast(gu, ga, [2])
    assert np.all(out[..., 2] == 1) and np.all(out[..., :2] == 0) and np.all(gu == 0)


def test_hybrid_misaligned_raises(tmp_path):
    gu, _, _, _ = fake(n=5)
    with pytest.raises(ValueError, match="aligned"):
        hybrid_input_analysis(gu, gu[:4], lambda f: f, None, VOLTAGE)
    fn = linear_surrogate(np.eye(9)[:, :2])
    tab = hybrid_input_analysis(gu, gu, fn, fn(gu), VOLTAGE)
    rows = list(csv.reader(open(write_hybrid(tab, tmp_path / "h.csv"))))
    assert rows[0] == ["substituted", "voltage_rmse_pu", "delta_pct"] and len(rows) == 6


# -- weather bins ----------------------------------------------------------------------
def test_identical_forecasts_give_unit_ratios():
    yp, yt, _, _ = fake()
    bins = weather_bin_analysis(yp, yp, yt, WEATHER)
    for b in bins.values():
        assert all(r is None or r == 1.0 for r in b.ratio)
        assert b.counts.sum() == yt[..., 0].size
        assert len(b.edges) == 7


def test_single_bin_equals_global_rmse():
    yp, yt, _, _ = fake()
    b = weather_bin_analysis(yp, yt, yt, WEATHER, n_bins=1)["wind"]
    assert b.gu_rmse[0] == pytest.approx(compute_metrics(yp, yt, WEATHER).weather_rmse["wind"], abs=1e-12)


def test_empty_bins_have_null_ratio(tmp_path):
    yt = np.zeros((4, 1, 1, 3))
    yt[0, ..., 0] = 1.0                   # temperature takes only its two extremes
    bins = weather_bin_analysis(yt, yt, yt, WEATHER, features=("temperature",), n_bins=4)
    b = bins["temperature"]
    assert b.counts.tolist() == [3, 0, 0, 1]
    assert b.ratio[1] is None and b.ratio[2] is None
    rows = list(csv.DictReader(open(write_bins(bins, tmp_path / "b.csv"))))
    assert rows[1]["ratio_ga_gu"] == ""


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=60), st.integers(1, 8))
def test_bin_membership_brute_force(values, n_bins):
    v = np.asarray(values)
    if v.max() == v.min():
        return
    edges = np.linspace(v.min(), v.max(), n_bins + 1)
    idx = bin_index(v, edges)
    for x, i in zip(v, idx):
        # brute force: last bin whose lower edge is <= x, the maximum in the final bin
        expect = max(j for j in range(n_bins) if edges[j] <= x)
        assert i == expect


# -- large errors ------------------------------------------------------------------------
def test_top_fraction_count_and_tie_break():
    assert len(top_fraction(np.random.default_rng(0).uniform(size=1000), 0.05)) == 50
    assert top_fraction(np.ones(1000), 0.05).tolist() == list(range(50))
    assert len(top_fraction(np.arange(21.0), 0.05)) == 2      # ceil(1.05)
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            top_fraction(np.ones(3), bad)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=80), st.floats(0.01, 1.0))
def test_top_fraction_sort_oracle(scores, frac):
    m = math.ceil(frac * len(scores) - 1e-9)
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    assert top_fraction(scores, frac).tolist() == sorted(ranked[:m])


def test_large_error_subset_metrics_recomputed():
    yp, yt, vp, vt = fake(n=100, seed=4)
    gp = yp
    ap = np.clip(yt + 0.5 * (yp - yt), 0, 1)
    vga = vt + 0.5 * (vp - vt)
    per = per_sample_voltage_rmse(vp, vt, VOLTAGE)
    rep = large_error_analysis(per, gp, ap, vp, vga, yt, vt, WEATHER, VOLTAGE, fraction=0.05)
    sel = rep.indices
    assert len(sel) == 5 and set(sel) <= set(range(100))
    assert np.all(per[sel].min() >= np.delete(per, sel).max())
    direct = compute_metrics(ap[sel], yt[sel], WEATHER, vga[sel], vt[sel], VOLTAGE)
    assert rep.ga["rmse_voltage"] == pytest.approx(direct.voltage_rmse, abs=1e-12)
    assert rep.ga["rmse_wind"] == pytest.approx(direct.weather_rmse["wind"], abs=1e-12)
    assert rep.delta_pct["rmse_voltage"] == pytest.approx(-50.0, abs=1e-9)
    assert 0.0 <= rep.composition["daytime_fraction"] <= 1.0
    assert rep.composition["n_selected"] == 5


def test_per_sample_rmse_oracle():
    _, _, vp, vt = fake(n=4)
    per = per_sample_voltage_rmse(vp, vt, VOLTAGE)
    for i in range(4):
        assert per[i] == pytest.approx(loop_rmse(vp[i], vt[i], 0.9, 1.1), abs=1e-12)


# -- bus histogram ------------------------------------------------------------------------
def test_all_equal_values():
    h = bus_error_histogram(np.full(7, 0.004))
    assert h.mean == pytest.approx(0.004, abs=1e-18) and h.median == 0.004 and h.p95 == 0.004
    assert h.counts.sum() == 7


def test_p95_of_one_to_hundred():
    # linear interpolation: rank 0.95 * (100 - 1) = 94.05 between sorted values 95 and 96
    h = bus_error_histogram(np.arange(1, 101, dtype=float))
    assert h.p95 == pytest.approx(95 + 0.05 * (96 - 95), abs=1e-12)
    assert h.median == 50.5 and h.counts.sum() == 100


def test_per_bus_rmse_and_csv(tmp_path):
    _, _, vp, vt = fake(n=6, B=4)
    per = per_bus_rmse(vp, vt, VOLTAGE)
    for b in range(4):
        assert per[b] == pytest.approx(loop_rmse(vp[..., b], vt[..., b], 0.9, 1.1), abs=1e-12)
    rows = list(csv.reader(open(write_bus_histogram(bus_error_histogram(per, 5), tmp_path / "b.csv"))))
    assert rows[0] == ["lo", "hi", "count"] and rows[-1][0] == "p95"
