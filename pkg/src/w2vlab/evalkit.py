"""Evaluation protocols: metrics, weight sweeps, hybrid substitution, weather bins,
large-error isolation and bus-level error histograms.

RMSE is always aggregated as square -> mean over every axis -> root. Percentage
changes follow ``100 * (new - base) / base``; negative values are improvements.
Every analysis has a ``write_*`` helper emitting a CSV with fixed column names.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .weatherfield import FEATURES, UNITS, MinMaxScaler


def rmse(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def pct_change(new: float, base: float) -> float:
    """``100 * (new - base) / base``; 0 when both are 0, NaN when only the base is 0."""
    if base == 0:
        return 0.0 if new == 0 else math.nan
    return 100.0 * (new - base) / base


def _write_rows(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for v in r])
    return path


def denormalize_weather(x: np.ndarray, scaler: MinMaxScaler) -> np.ndarray:
    """Invert per-feature scaling for arrays shaped ``[..., S, N]``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for n, feat in enumerate(FEATURES[:x.shape[-1]]):
        lo, hi = scaler.group(feat)
        out[..., n] = x[..., n] * (hi - lo) + lo
    return out


def denormalize_voltage(v: np.ndarray, scaler: MinMaxScaler) -> np.ndarray:
    lo, hi = scaler.group("voltage")
    return np.asarray(v, dtype=np.float64) * (hi - lo) + lo


# -- metrics -----------------------------------------------------------------------
@dataclass
class MetricReport:
    weather_rmse: dict               # feature -> RMSE in physical units
    weather_rmse_norm: float         # all features together, normalized space
    voltage_rmse: float | None       # p.u.
    voltage_mae: float | None
    per_horizon: list                # one dict per horizon step
    n_samples: int

    def rows(self) -> list[tuple]:
        out = [(f"weather_rmse_{f}", UNITS[f], v) for f, v in self.weather_rmse.items()]
        out.append(("weather_rmse_norm", "-", self.weather_rmse_norm))
        if self.voltage_rmse is not None:
            out += [("voltage_rmse", "p.u.", self.voltage_rmse), ("voltage_mae", "p.u.", self.voltage_mae)]
        out.append(("n_samples", "-", self.n_samples))
        return out


def compute_metrics(weather_pred, weather_true, weather_scaler: MinMaxScaler,
                    voltage_pred=None, voltage_true=None, voltage_scaler: MinMaxScaler | None = None) -> MetricReport:
    """Metrics for ``[n, h, S, N]`` weather forecasts and optional ``[n, h, B]`` voltages (normalized inputs)."""
    wp, wt = np.asarray(weather_pred, float), np.asarray(weather_true, float)
    if wp.shape != wt.shape:
        raise ValueError(f"weather prediction {wp.shape} and target {wt.shape} differ")
    if weather_scaler is None:
        raise ValueError("a weather scaler is required for physical-unit metrics")
    pw, tw = denormalize_weather(wp, weather_scaler), denormalize_weather(wt, weather_scaler)
    feats = FEATURES[:wp.shape[-1]]
    weather = {f: rmse(pw[..., n], tw[..., n]) for n, f in enumerate(feats)}
    v_rmse = v_mae = None
    if voltage_pred is not None:
        if voltage_scaler is None:
            raise ValueError("a voltage scaler is required for p.u. metrics")
        pv, tv = denormalize_voltage(voltage_pred, voltage_scaler), denormalize_voltage(voltage_true, voltage_scaler)
        if pv.shape != tv.shape:
            raise ValueError(f"voltage prediction {pv.shape} and target {tv.shape} differ")
        v_rmse, v_mae = rmse(pv, tv), float(np.mean(np.abs(pv - tv)))
    per_h = []
    for j in range(wp.shape[1]):
        row = {"step": j + 1}
        row.update({f"rmse_{f}": rmse(pw[:, j, ..., n], tw[:, j, ..., n]) for n, f in enumerate(feats)})
        if voltage_pred is not None:
            row["rmse_voltage"] = rmse(pv[:, j], tv[:, j])
        per_h.append(row)
    return MetricReport(weather, rmse(wp, wt), v_rmse, v_mae, per_h, int(wp.shape[0]))


def write_metrics(report: MetricReport, path) -> Path:
    return _write_rows(path, ("metric", "unit", "value"), report.rows())


# -- sweeps ------------------------------------------------------------------------
@dataclass
class SweepResult:
    kind: str
    candidates: list
    rows: list                     # dicts: value, L_v, L_w, dL_v_pct, dL_w_pct, feasible, failed
    baseline: dict
    selected: float | None
    rationale: str
    cap: float

    def row(self, value: float) -> dict:
        return next(r for r in self.rows if r["value"] == value)


def _select(kind: str, rows: list, cap: float) -> tuple[float | None, str]:
    key_gain, key_guard = ("dL_w_pct", "dL_v_pct") if kind == "lambda" else ("dL_v_pct", "dL_w_pct")
    feasible = [r for r in rows if not r["failed"] and r[key_guard] <= 100.0 * cap]
    for r in rows:
        r["feasible"] = r in feasible
    if not feasible:
        return None, f"no candidate keeps {key_guard[1:4]} within +{100 * cap:g}%"
    best = min(feasible, key=lambda r: (r[key_gain], r["value"]))
    return best["value"], (f"largest {key_gain[1:4]} reduction ({best[key_gain]:+.3f}%) with "
                           f"{key_guard[1:4]} change {best[key_guard]:+.3f}% <= +{100 * cap:g}%")


def run_sweep(kind: str, candidates, train_fn: Callable[[float], dict], baseline: dict | None = None,
              cap: float = 0.05, cache: SweepResult | None = None) -> SweepResult:
    """Train every candidate weight and compare against the weight-0 baseline.

    ``train_fn(weight)`` returns validation ``{"L_v": ..., "L_w": ...}``. For
    ``lambda`` the pick is the largest L_w reduction with an L_v increase
    within ``cap``; for ``gamma`` the roles swap. Ties go to the smaller
    weight, so the result does not depend on candidate order. A candidate
    whose training raises is recorded as failed and skipped.
    """
    if kind not in ("lambda", "gamma"):
        raise ValueError(f"sweep kind must be 'lambda' or 'gamma', got {kind!r}")
    if baseline is None:
        baseline = train_fn(0.0)
    done = {r["value"]: r for r in (cache.rows if cache else [])}
    rows = []
    for c in sorted({float(c) for c in candidates}):
        if c in done:
            rows.append(dict(done[c]))
            continue
        try:
            res = train_fn(c)
            row = {"value": c, "L_v": float(res["L_v"]), "L_w": float(res["L_w"]), "failed": False, "error": ""}
            row["dL_v_pct"] = pct_change(row["L_v"], baseline["L_v"])
            row["dL_w_pct"] = pct_change(row["L_w"], baseline["L_w"])
        except Exception as exc:    # a failed candidate must not end the sweep
            row = {"value": c, "L_v": math.nan, "L_w": math.nan, "dL_v_pct": math.nan, "dL_w_pct": math.nan,
                   "failed": True, "error": f"{type(exc).__name__}: {exc}"}
        rows.append(row)
    selected, why = _select(kind, rows, cap)
    return SweepResult(kind, [r["value"] for r in rows], rows, dict(baseline), selected, why, cap)


def write_sweep(res: SweepResult, path) -> Path:
    rows = [(0.0, res.baseline["L_v"], res.baseline["L_w"], 0.0, 0.0, "baseline", False)]
    rows += [(r["value"], r["L_v"], r["L_w"], r["dL_v_pct"], r["dL_w_pct"],
              "failed" if r["failed"] else ("feasible" if r["feasible"] else "over_cap"),
              r["value"] == res.selected) for r in res.rows]
    return _write_rows(path, ("value", "L_v", "L_w", "dL_v_pct", "dL_w_pct", "status", "selected"), rows)


# -- hybrid substitution -------------------------------------------------------------
@dataclass
class HybridTable:
    rows: list          # dicts: substituted, voltage_rmse, delta_pct
    gu_rmse: float
    ga_rmse: float

    def by_name(self) -> dict:
        return {r["substituted"]: r for r in self.rows}


def hybrid_forecast(gu: np.ndarray, ga: np.ndarray, features: Sequence[int]) -> np.ndarray:
    out = np.array(gu, dtype=np.float64, copy=True)
    idx = list(features)
    out[..., idx] = ga[..., idx]
    return out


def hybrid_input_analysis(gu_forecasts, ga_forecasts, voltage_fn: Callable[[np.ndarray], np.ndarray],
                          targets, voltage_scaler: MinMaxScaler, features=FEATURES) -> HybridTable:
    """Substitute GA forecasts for one feature at a time (and for none/all) and score the voltages.

    ``voltage_fn`` maps ``[n, h, S, N]`` normalized forecasts to ``[n, h, B]``
    normalized voltages (the frozen surrogate).
    """
    gu, ga = np.asarray(gu_forecasts, float), np.asarray(ga_forecasts, float)
    if gu.shape != ga.shape:
        raise ValueError(f"GU forecasts {gu.shape} and GA forecasts {ga.shape} are not aligned")
    tv = denormalize_voltage(targets, voltage_scaler)

    def score(fc):
        return rmse(denormalize_voltage(voltage_fn(fc), voltage_scaler), tv)

    N = gu.shape[-1]
    gu_r, ga_r = score(gu), score(ga)
    rows = [{"substituted": "none", "voltage_rmse": gu_r, "delta_pct": 0.0}]
    for n in range(N):
        r = score(hybrid_forecast(gu, ga, [n]))
        rows.append({"substituted": features[n], "voltage_rmse": r, "delta_pct": pct_change(r, gu_r)})
    r_all = score(hybrid_forecast(gu, ga, range(N)))
    rows.append({"substituted": "all", "voltage_rmse": r_all, "delta_pct": pct_change(r_all, gu_r)})
    return HybridTable(rows, gu_r, ga_r)


def write_hybrid(tab: HybridTable, path) -> Path:
    return _write_rows(path, ("substituted", "voltage_rmse_pu", "delta_pct"),
                       [(r["substituted"], r["voltage_rmse"], r["delta_pct"]) for r in tab.rows])


# -- weather bins ----------------------------------------------------------------------
@dataclass
class BinAnalysis:
    feature: str
    edges: np.ndarray
    counts: np.ndarray
    gu_rmse: list
    ga_rmse: list
    ratio: list            # None for empty bins


def bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Equal-width bin membership; the maximum falls in the last bin."""
    n_bins = len(edges) - 1
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, n_bins - 1)


def weather_bin_analysis(gu_forecasts, ga_forecasts, actual, weather_scaler: MinMaxScaler,
                         features=("temperature", "wind"), n_bins: int = 6) -> dict[str, BinAnalysis]:
    """Per-bin GU/GA RMSE of each feature, binned on the actual (target) values in physical units."""
    gu = denormalize_weather(gu_forecasts, weather_scaler)
    ga = denormalize_weather(ga_forecasts, weather_scaler)
    act = denormalize_weather(actual, weather_scaler)
    out = {}
    for feat in features:
        n = FEATURES.index(feat)
        a = act[..., n].ravel()
        eg, ea = (gu[..., n].ravel() - a), (ga[..., n].ravel() - a)
        edges = np.linspace(a.min(), a.max(), n_bins + 1)
        idx = bin_index(a, edges)
        counts = np.bincount(idx, minlength=n_bins)
        g_r, a_r, ratio = [], [], []
        for b in range(n_bins):
            m = idx == b
            if not m.any():
                g_r.append(None), a_r.append(None), ratio.append(None)
                continue
            rg, ra = float(np.sqrt(np.mean(eg[m] ** 2))), float(np.sqrt(np.mean(ea[m] ** 2)))
            g_r.append(rg), a_r.append(ra)
            ratio.append(ra / rg if rg > 0 else (1.0 if ra == 0 else None))
        out[feat] = BinAnalysis(feat, edges, counts, g_r, a_r, ratio)
    return out


def write_bins(bins: dict[str, BinAnalysis], path) -> Path:
    rows = []
    for feat, b in bins.items():
        for i in range(len(b.counts)):
            rows.append((feat, i, b.edges[i], b.edges[i + 1], int(b.counts[i]), b.gu_rmse[i], b.ga_rmse[i],
                         b.ratio[i]))
    return _write_rows(path, ("feature", "bin", "lo", "hi", "count", "gu_rmse", "ga_rmse", "ratio_ga_gu"), rows)


# -- large errors ------------------------------------------------------------------------
@dataclass
class LargeErrorReport:
    indices: np.ndarray
    fraction: float
    gu: dict               # subset metrics for GU (voltage p.u., weather per feature)
    ga: dict
    delta_pct: dict
    composition: dict


def top_fraction(scores, fraction: float) -> np.ndarray:
    """Indices of the top ``ceil(fraction * n)`` scores; ties keep earlier indices first."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    s = np.asarray(scores, dtype=np.float64)
    m = math.ceil(fraction * len(s) - 1e-9)
    order = np.lexsort((np.arange(len(s)), -s))
    return np.sort(order[:m])


def per_sample_voltage_rmse(v_pred, v_true, voltage_scaler: MinMaxScaler) -> np.ndarray:
    d = denormalize_voltage(v_pred, voltage_scaler) - denormalize_voltage(v_true, voltage_scaler)
    return np.sqrt(np.mean(d.reshape(len(d), -1) ** 2, axis=1))


def large_error_analysis(gu_sample_rmse, gu_forecasts, ga_forecasts, gu_voltages, ga_voltages,
                         weather_true, voltage_true, weather_scaler: MinMaxScaler, voltage_scaler: MinMaxScaler,
                         fraction: float = 0.05, n_bins: int = 6) -> LargeErrorReport:
    """Isolate the samples where GU voltage error is largest and compare GA there."""
    sel = top_fraction(gu_sample_rmse, fraction)
    tw = denormalize_weather(weather_true, weather_scaler)
    tv = denormalize_voltage(voltage_true, voltage_scaler)

    def subset_metrics(fc, volt):
        pw = denormalize_weather(fc[sel], weather_scaler)
        d = {f"rmse_{f}": rmse(pw[..., n], tw[sel][..., n]) for n, f in enumerate(FEATURES[:pw.shape[-1]])}
        d["rmse_voltage"] = rmse(denormalize_voltage(volt[sel], voltage_scaler), tv[sel])
        return d

    gu, ga = subset_metrics(np.asarray(gu_forecasts), np.asarray(gu_voltages)), \
        subset_metrics(np.asarray(ga_forecasts), np.asarray(ga_voltages))
    delta = {k: pct_change(ga[k], gu[k]) for k in gu}
    temp_all = tw[..., FEATURES.index("temperature")]
    edges = np.linspace(temp_all.min(), temp_all.max(), n_bins + 1)
    sub = tw[sel]
    ghi = sub[..., FEATURES.index("ghi")]
    wind = sub[..., FEATURES.index("wind")]
    temp_mean = sub[..., FEATURES.index("temperature")].reshape(len(sel), -1).mean(axis=1)
    q1, med, q3 = np.percentile(wind, [25, 50, 75])
    comp = {
        "n_selected": int(len(sel)),
        "daytime_fraction": float(np.mean(ghi.reshape(len(sel), -1).max(axis=1) > 0)),
        "low_temperature_fraction": float(np.mean(temp_mean < edges[2])),
        "low_temperature_threshold": float(edges[2]),
        "wind_median": float(med),
        "wind_iqr": float(q3 - q1),
        "wind_median_all": float(np.median(tw[..., FEATURES.index("wind")])),
    }
    return LargeErrorReport(sel, fraction, gu, ga, delta, comp)


def write_large_errors(rep: LargeErrorReport, path) -> Path:
    rows = [(k, rep.gu[k], rep.ga[k], rep.delta_pct[k]) for k in rep.gu]
    rows += [(k, "", "", v) for k, v in rep.composition.items()]
    return _write_rows(path, ("metric", "gu", "ga", "delta_pct_or_value"), rows)


# -- bus errors ---------------------------------------------------------------------------
@dataclass
class BusHistogram:
    counts: np.ndarray
    edges: np.ndarray
    mean: float
    median: float
    p95: float


def bus_error_histogram(per_bus_rmse, n_bins: int = 20) -> BusHistogram:
    """Fixed-width histogram plus mean/median/p95 (linear-interpolated quantile)."""
    x = np.asarray(per_bus_rmse, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        hi = lo + 1e-12
    counts, edges = np.histogram(x, bins=n_bins, range=(lo, hi))
    return BusHistogram(counts, edges, float(x.mean()), float(np.median(x)),
                        float(np.percentile(x, 95, method="linear")))


def per_bus_rmse(v_pred, v_true, voltage_scaler: MinMaxScaler) -> np.ndarray:
    d = denormalize_voltage(v_pred, voltage_scaler) - denormalize_voltage(v_true, voltage_scaler)
    return np.sqrt(np.mean(d.reshape(-1, d.shape[-1]) ** 2, axis=0))


def write_bus_histogram(hist: BusHistogram, path) -> Path:
    rows = [(hist.edges[i], hist.edges[i + 1], int(hist.counts[i])) for i in range(len(hist.counts))]
    rows += [("mean", "", hist.mean), ("median", "", hist.median), ("p95", "", hist.p95)]
    return _write_rows(path, ("lo", "hi", "count"), rows)
