"""``w2vlab`` command line: data generation, training, sweeps, evaluation, reports.

Layout under ``<out>/<run_name>/``::

    data/      weather.csv voltage.csv metadata.json grid.json
    models/    w2v.npz pca.npz forecaster_<GU|GA>_h<h>.npz loss curves, gamma.json
    eval/      metrics, sweeps, hybrid, bins, large errors, bus histograms
    report/    comparison.csv w2v_comparison.csv *.png

Each stage directory carries a ``manifest.json`` with the config hash, seeds,
package versions and a sha256 for every artifact. Exit codes: 0 success,
1 invalid configuration or missing upstream artifact, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, evalkit
from .autodiff import TrainingError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .dataset import NexusDataset
from .forecaster import (
    ForecasterModel, ForecastTrainConfig, WindowGeometry, forecast, make_windows, select_gamma, to_w2v_rows,
    train_forecaster,
)
from .gridsim import DatasetGenerationError, GridModel, build_reference_grid, generate_dataset
from .pca import PcaModel, fit_pca
from .w2v import (
    W2VArch, append_ledger_row, build_baseline, build_w2v, load_w2v, parameter_checksum, predict_voltage,
    save_w2v, train_w2v,
)
from .weatherfield import FEATURES, feature_columns, generate_synthetic_series, load_weather_csv, nearest_location_mapping

log = logging.getLogger("w2vlab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class MissingArtifactError(RuntimeError):
    """An upstream stage has not been run; the message names the command to run."""


class OverwriteError(RuntimeError):
    pass


def stage_seed(seed: int, stage: str) -> int:
    """Per-stage seed from a stable hash of ``"<seed>:<stage>"``."""
    return int(hashlib.sha256(f"{seed}:{stage}".encode()).hexdigest()[:8], 16)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- run layout ---------------------------------------------------------------------
class Run:
    def __init__(self, cfg: ExperimentConfig, overwrite: bool = False, base_dir: Path | None = None):
        self.cfg = cfg
        self.overwrite = overwrite
        self.base_dir = base_dir or Path.cwd()
        self.root = Path(cfg.out) / cfg.run_name

    def dir(self, stage: str) -> Path:
        return self.root / stage

    def begin(self, stage: str, *outputs: str) -> Path:
        d = self.dir(stage)
        if not self.overwrite:
            clash = [o for o in outputs if (d / o).exists()]
            if clash:
                raise OverwriteError(f"{d / clash[0]} already exists; pass --overwrite to replace it")
        d.mkdir(parents=True, exist_ok=True)
        return d

    def require(self, stage: str, name: str, command: str) -> Path:
        p = self.dir(stage) / name
        if not p.exists():
            raise MissingArtifactError(f"{p} not found; run `w2vlab {command}` first")
        return p

    def manifest(self, stage: str, command: str, artifacts, extra: dict | None = None) -> Path:
        d = self.dir(stage)
        mpath = d / "manifest.json"
        old = json.loads(mpath.read_text()) if mpath.exists() else {"entries": {}}
        entry = {
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
            "stage_seed": stage_seed(self.cfg.seed, command),
            "versions": {"w2vlab": __version__, "numpy": np.__version__, "python": platform.python_version()},
            "artifacts": {str(Path(a).relative_to(d)): sha256_file(a) for a in sorted(map(str, artifacts))},
        }
        entry.update(extra or {})
        old["entries"][command] = entry
        mpath.write_text(json.dumps(old, indent=1, sort_keys=True))
        return mpath


# -- shared builders ----------------------------------------------------------------
def build_grid(cfg: ExperimentConfig, base_dir: Path) -> GridModel:
    if cfg.grid.file:
        p = Path(cfg.grid.file)
        return GridModel.load(p if p.is_absolute() else base_dir / p)
    return build_reference_grid(cfg.grid.reference)


def build_series(cfg: ExperimentConfig, grid: GridModel, base_dir: Path):
    if cfg.weather.file:
        p = Path(cfg.weather.file)
        return load_weather_csv(p if p.is_absolute() else base_dir / p, coords=grid.location_coords)
    return generate_synthetic_series(cfg.weather.synth, grid.location_coords, cfg.weather.T,
                                     location_ids=grid.location_ids)


def w2v_arch(cfg: ExperimentConfig, ds: NexusDataset, pca: PcaModel, lam: float | None = None) -> W2VArch:
    s = cfg.w2v
    return W2VArch(ds.W, ds.B, pca.K, s.hidden_w, s.hidden_v, s.encoder_hidden, s.out_act,
                   s.lam if lam is None else lam)


def load_dataset(run: Run) -> NexusDataset:
    run.require("data", "metadata.json", "generate-data")
    return NexusDataset.load(run.dir("data"))


def load_pca(run: Run) -> PcaModel:
    ck = load_checkpoint(run.require("models", "pca.npz", "train-w2v"))
    return PcaModel.from_arrays(ck["extra"])


def horizon_tag(hs) -> str:
    return f"h{hs.h}"


def forecaster_config(cfg: ExperimentConfig, gamma: float = 0.0) -> ForecastTrainConfig:
    return replace(cfg.forecaster.train, seed=stage_seed(cfg.seed, "forecaster"), gamma=gamma)


def horizon_windows(ds: NexusDataset, hs) -> dict:
    geom = WindowGeometry(hs.k, hs.lead, hs.h)
    return {p: make_windows(ds, geom, p) for p in ("train", "val", "test")}


def new_forecaster(cfg: ExperimentConfig, ds: NexusDataset, hs) -> ForecasterModel:
    geom = WindowGeometry(hs.k, hs.lead, hs.h)
    return ForecasterModel(geom, ds.n_locations, ds.N, cfg.forecaster.branch,
                           seed=stage_seed(cfg.seed, f"forecaster-init-{horizon_tag(hs)}"))


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


# -- commands -------------------------------------------------------------------------
def cmd_generate_data(run: Run, args) -> int:
    cfg = run.cfg
    d = run.begin("data", "metadata.json")
    grid = build_grid(cfg, run.base_dir)
    series = build_series(cfg, grid, run.base_dir)
    mapping = nearest_location_mapping(grid.bus_coords, grid.location_coords, grid.location_ids)
    try:
        ds = generate_dataset(grid, series, cfg.grid.renewables, mapping, seed=stage_seed(cfg.seed, "split"),
                              vmax=cfg.data.vmax, max_drop_fraction=cfg.data.max_drop_fraction,
                              fit_on_full=cfg.data.fit_on_full, workers=cfg.data.workers)
    except DatasetGenerationError as exc:
        raise DatasetGenerationError(f"generate-data on grid {grid.name!r}: {exc}") from exc
    paths = ds.save(d, series, extra_meta={"grid_name": grid.name, "T_generated": int(series.T)})
    paths["grid"] = grid.save(d / "grid.json")
    dump_config(cfg, d / "config.yaml")
    reasons = {}
    for r in ds.filter_log:
        reasons[r["reason"]] = reasons.get(r["reason"], 0) + 1
    print(f"generated {series.T} steps, retained {ds.T}, filtered {len(ds.filter_log)} "
          + (str(reasons) if reasons else ""))
    run.manifest("data", "generate-data", [*paths.values(), d / "config.yaml"],
                 {"filtered": len(ds.filter_log)})
    return EXIT_OK


def _train_one_w2v(cfg: ExperimentConfig, ds: NexusDataset, pca: PcaModel, kind: str, seed: int, lam=None):
    arch = w2v_arch(cfg, ds, pca, lam)
    model = build_w2v(arch, pca, seed) if kind == "w2v" else build_baseline(kind, arch, seed)
    report = train_w2v(model, ds, replace(cfg.w2v.train, seed=seed))
    return model, report


def _fit_pca(cfg, ds):
    w_tr, _ = ds.subset("random", "train")
    return fit_pca(w_tr, feature_columns(ds.n_locations), cfg.w2v.max_recon_error)


def _seed_job(payload):
    cfg_dict, data_dir, seed, out_dir = payload
    cfg = ExperimentConfig.from_dict(cfg_dict)
    ds = NexusDataset.load(data_dir)
    pca = _fit_pca(cfg, ds)
    rows = []
    for kind in ["w2v", *cfg.w2v.baselines]:
        model, rep = _train_one_w2v(cfg, ds, pca, kind, seed)
        rep.write_csv(Path(out_dir) / f"{kind}_history.csv")
        rows.append(rep.summary_row())
    return rows


def cmd_train_w2v(run: Run, args) -> int:
    cfg = run.cfg
    ds = load_dataset(run)
    d = run.begin("models", "w2v.npz")
    pca = _fit_pca(cfg, ds)
    lam = cfg.w2v.lam
    sel = run.dir("models") / "lambda.json"
    if sel.exists():
        lam = json.loads(sel.read_text())["lambda"]
    save_checkpoint(d / "pca.npz", {}, extra=pca.to_arrays(), meta={"counts": list(pca.counts)})
    seed = stage_seed(cfg.seed, "w2v")
    artifacts = [d / "pca.npz"]
    rows = []
    for kind in ["w2v", *cfg.w2v.baselines]:
        model, rep = _train_one_w2v(cfg, ds, pca, kind, seed, lam)
        name = "w2v" if kind == "w2v" else kind
        artifacts.append(save_w2v(d / f"{name}.npz", model, meta={"seed": seed, "lam": lam}))
        artifacts.append(rep.write_csv(d / f"{name}_history.csv"))
        rows.append(rep.summary_row())
        print(f"{name}: test voltage RMSE {rep.test['rmse_pu']:.4e} p.u. ({rep.epochs_run} epochs)")
    artifacts.append(write_csv(d / "w2v_comparison.csv", list(rows[0]), [list(r.values()) for r in rows]))
    n_par = int(getattr(args, "parallel_seeds", 0) or 0)
    if n_par > 1:
        seeds = [stage_seed(cfg.seed + i, "w2v") for i in range(n_par)]
        jobs = [(cfg.to_dict(), str(run.dir("data")), s, str(d / "seeds" / f"seed_{i}"))
                for i, s in enumerate(seeds)]
        for j in jobs:
            Path(j[3]).mkdir(parents=True, exist_ok=True)
        with ProcessPoolExecutor(max_workers=n_par) as pool:
            results = list(pool.map(_seed_job, jobs))
        ledger = d / "seeds" / "results.csv"
        if ledger.exists():
            ledger.unlink()
        for rs in results:
            for r in rs:
                append_ledger_row(ledger, r)
        artifacts.append(ledger)
        artifacts += sorted((d / "seeds").glob("seed_*/*.csv"))
    run.manifest("models", "train-w2v", artifacts, {"lambda": lam, "pca_counts": list(pca.counts)})
    return EXIT_OK


def _load_w2v(run: Run):
    return load_w2v(run.require("models", "w2v.npz", "train-w2v"))


def _gamma_for(run: Run, hs) -> float:
    if hs.gamma is not None:
        return float(hs.gamma)
    p = run.dir("models") / "gamma.json"
    if p.exists():
        table = json.loads(p.read_text())
        if horizon_tag(hs) in table:
            return float(table[horizon_tag(hs)])
    return float(run.cfg.forecaster.gamma_default)


def cmd_train_forecaster(run: Run, args) -> int:
    cfg = run.cfg
    mode = args.mode
    ds = load_dataset(run)
    w2v = None
    if mode == "GA":
        w2v = _load_w2v(run)
    elif (run.dir("models") / "w2v.npz").exists():
        w2v = _load_w2v(run)          # only for monitoring the voltage loss
    d = run.begin("models", *[f"forecaster_{mode}_{horizon_tag(h)}.npz" for h in cfg.forecaster.horizons])
    artifacts = []
    checks = {}
    for hs in cfg.forecaster.horizons:
        wins = horizon_windows(ds, hs)
        gamma = _gamma_for(run, hs) if mode == "GA" else 0.0
        before = parameter_checksum(w2v) if w2v is not None else None
        fr = train_forecaster(new_forecaster(cfg, ds, hs), wins, mode, w2v, forecaster_config(cfg, gamma))
        if w2v is not None and parameter_checksum(w2v) != before:
            raise TrainingError("W2V parameters changed during forecaster training")
        tag = f"{mode}_{horizon_tag(hs)}"
        artifacts.append(save_checkpoint(d / f"forecaster_{tag}.npz", fr.model.state_dict(), meta={
            "mode": mode, "gamma": gamma, "geometry": asdict(fr.geometry), "branch": asdict(cfg.forecaster.branch),
            "stage_boundary": fr.stage_boundary, "best_epoch": fr.best_epoch, "seed": fr.seed}))
        artifacts.append(fr.write_csv(d / f"forecaster_{tag}_history.csv"))
        checks[tag] = before
        print(f"{tag}: gamma={gamma:g} epochs={len(fr.history)} stage boundary={fr.stage_boundary}")
    run.manifest("models", f"train-forecaster-{mode}", artifacts, {"w2v_checksum": checks})
    return EXIT_OK


def _load_forecaster(run: Run, ds: NexusDataset, hs, mode: str) -> ForecasterModel:
    p = run.require("models", f"forecaster_{mode}_{horizon_tag(hs)}.npz", f"train-forecaster --mode {mode}")
    ck = load_checkpoint(p)
    model = new_forecaster(run.cfg, ds, hs)
    model.load_state_dict(ck["params"])
    model.eval()
    return model


def cmd_sweep(run: Run, args) -> int:
    cfg = run.cfg
    ds = load_dataset(run)
    if args.kind == "lambda":
        d = run.begin("eval", "sweep_lambda.csv")
        pca = _fit_pca(cfg, ds)
        seed = stage_seed(cfg.seed, "w2v")

        def train_fn(lam):
            _, rep = _train_one_w2v(cfg, ds, pca, "w2v", seed, lam)
            best = next(r for r in rep.history if r["epoch"] == rep.best_epoch)
            return {"L_v": best["val_v"], "L_w": best["val_w"]}

        res = evalkit.run_sweep("lambda", cfg.w2v.lambda_grid, train_fn, cap=cfg.eval.lambda_cap)
        arts = [evalkit.write_sweep(res, d / "sweep_lambda.csv")]
        if res.selected is not None:
            mdir = run.dir("models")
            mdir.mkdir(parents=True, exist_ok=True)
            (mdir / "lambda.json").write_text(json.dumps({"lambda": res.selected, "why": res.rationale}))
            run.manifest("models", "sweep-lambda", [mdir / "lambda.json"])
        print(f"lambda sweep: selected {res.selected} ({res.rationale})")
        run.manifest("eval", "sweep-lambda", arts, {"selected": res.selected})
        return EXIT_OK
    d = run.begin("eval", *[f"sweep_gamma_{horizon_tag(h)}.csv" for h in cfg.forecaster.horizons])
    w2v = _load_w2v(run)
    table, arts = {}, []
    for hs in cfg.forecaster.horizons:
        wins = horizon_windows(ds, hs)
        sel = select_gamma(cfg.forecaster.gamma_grid, wins, w2v, lambda: new_forecaster(cfg, ds, hs),
                           forecaster_config(cfg), cap=cfg.eval.gamma_cap, refine=cfg.forecaster.gamma_refine)
        table[horizon_tag(hs)] = sel.gamma
        arts.append(evalkit.write_sweep(sel.sweep, d / f"sweep_gamma_{horizon_tag(hs)}.csv"))
        print(f"gamma sweep {horizon_tag(hs)}: selected {sel.gamma:g} ({sel.sweep.rationale})")
    mdir = run.dir("models")
    mdir.mkdir(parents=True, exist_ok=True)
    (mdir / "gamma.json").write_text(json.dumps(table, sort_keys=True))
    run.manifest("models", "sweep-gamma", [mdir / "gamma.json"])
    run.manifest("eval", "sweep-gamma", arts, {"selected": table})
    return EXIT_OK


def _predictions(run: Run, ds, w2v, hs):
    wins = horizon_windows(ds, hs)["test"]
    out = {}
    for mode in ("GU", "GA"):
        fc = forecast(_load_forecaster(run, ds, hs, mode), wins.X)
        out[mode] = (fc, voltages_from_forecasts(w2v, fc))
    return wins, out


def voltages_from_forecasts(w2v, fc: np.ndarray) -> np.ndarray:
    n, h, S, N = fc.shape
    rows = fc.transpose(0, 1, 3, 2).reshape(n * h, N * S)
    return predict_voltage(w2v, rows).reshape(n, h, -1)


def cmd_evaluate(run: Run, args) -> int:
    cfg = run.cfg
    ds = load_dataset(run)
    w2v = _load_w2v(run)
    d = run.begin("eval", *[f"metrics_GU_{horizon_tag(h)}.csv" for h in cfg.forecaster.horizons])
    arts = []
    for hs in cfg.forecaster.horizons:
        wins, preds = _predictions(run, ds, w2v, hs)
        tag = horizon_tag(hs)
        for mode, (fc, volt) in preds.items():
            rep = evalkit.compute_metrics(fc, wins.Y, ds.weather_scaler, volt, wins.V, ds.voltage_scaler)
            arts.append(evalkit.write_metrics(rep, d / f"metrics_{mode}_{tag}.csv"))
            arts.append(write_csv(d / f"per_horizon_{mode}_{tag}.csv", list(rep.per_horizon[0]),
                                  [list(r.values()) for r in rep.per_horizon]))
            hist = evalkit.bus_error_histogram(evalkit.per_bus_rmse(volt, wins.V, ds.voltage_scaler),
                                               cfg.eval.hist_bins)
            arts.append(evalkit.write_bus_histogram(hist, d / f"bus_hist_{mode}_{tag}.csv"))
            arts.append(export_forecasts(d / f"forecasts_{mode}_{tag}.csv", wins.t, fc, ds.weather_scaler))
        (gu, gu_v), (ga, ga_v) = preds["GU"], preds["GA"]
        bins = evalkit.weather_bin_analysis(gu, ga, wins.Y, ds.weather_scaler, n_bins=cfg.eval.n_bins)
        arts.append(evalkit.write_bins(bins, d / f"bins_{tag}.csv"))
        scores = evalkit.per_sample_voltage_rmse(gu_v, wins.V, ds.voltage_scaler)
        le = evalkit.large_error_analysis(scores, gu, ga, gu_v, ga_v, wins.Y, wins.V, ds.weather_scaler,
                                         ds.voltage_scaler, cfg.eval.large_error_fraction, cfg.eval.n_bins)
        arts.append(evalkit.write_large_errors(le, d / f"large_errors_{tag}.csv"))
        print(f"evaluate {tag}: {len(wins)} test windows")
    run.manifest("eval", "evaluate", arts)
    return EXIT_OK


def export_forecasts(path, anchors, fc: np.ndarray, scaler) -> Path:
    phys = evalkit.denormalize_weather(fc, scaler)
    n, h, S, N = phys.shape
    rows = [(int(anchors[i]), j + 1, s, *phys[i, j, s]) for i in range(n) for j in range(h) for s in range(S)]
    return write_csv(path, ("anchor", "step", "location", *[f"{f}_{u}" for f, u in
                                                             zip(FEATURES, ("f", "mph", "wm2"))]), rows)


def cmd_hybrid(run: Run, args) -> int:
    cfg = run.cfg
    ds = load_dataset(run)
    w2v = _load_w2v(run)
    d = run.begin("eval", *[f"hybrid_{horizon_tag(h)}.csv" for h in cfg.forecaster.horizons])
    arts = []
    for hs in cfg.forecaster.horizons:
        wins, preds = _predictions(run, ds, w2v, hs)
        tab = evalkit.hybrid_input_analysis(preds["GU"][0], preds["GA"][0],
                                            lambda fc: voltages_from_forecasts(w2v, fc), wins.V, ds.voltage_scaler)
        arts.append(evalkit.write_hybrid(tab, d / f"hybrid_{horizon_tag(hs)}.csv"))
    run.manifest("eval", "hybrid", arts)
    return EXIT_OK


def _read_metrics(path) -> dict:
    with open(path, newline="") as fh:
        return {r["metric"]: float(r["value"]) for r in csv.DictReader(fh)}


def cmd_report(run: Run, args) -> int:
    from . import plotting
    cfg = run.cfg
    d = run.begin("report", "comparison.csv")
    rows, plot_rows, arts = [], [], []
    names = [f"weather_rmse_{f}" for f in FEATURES] + ["weather_rmse_norm", "voltage_rmse"]
    for hs in cfg.forecaster.horizons:
        tag = horizon_tag(hs)
        gu = _read_metrics(run.require("eval", f"metrics_GU_{tag}.csv", "evaluate"))
        ga = _read_metrics(run.require("eval", f"metrics_GA_{tag}.csv", "evaluate"))
        row = [f"{hs.h}-step ({hs.lead}-step lead)", hs.k, hs.lead, hs.h, _gamma_for(run, hs)]
        for n in names:
            row += [gu[n], ga[n], evalkit.pct_change(ga[n], gu[n])]
        rows.append(row)
        plot_rows.append({"horizon": tag, "gu_voltage_rmse": gu["voltage_rmse"],
                          "ga_voltage_rmse": ga["voltage_rmse"]})
    header = ["horizon", "k", "lead", "h", "gamma"]
    for n in names:
        header += [f"gu_{n}", f"ga_{n}", f"delta_pct_{n}"]
    arts.append(write_csv(d / "comparison.csv", header, rows))
    cmp_src = run.dir("models") / "w2v_comparison.csv"
    if cmp_src.exists():
        (d / "w2v_comparison.csv").write_bytes(cmp_src.read_bytes())
        arts.append(d / "w2v_comparison.csv")
    arts.append(plotting.plot_horizon_comparison(plot_rows, d / "voltage_rmse_by_horizon.png"))
    hist = {}
    for name in ["w2v", *cfg.w2v.baselines]:
        p = run.dir("models") / f"{name}_history.csv"
        if p.exists():
            with open(p, newline="") as fh:
                hist[name] = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    if hist:
        arts.append(plotting.plot_loss_curves(hist, d / "w2v_val_loss.png"))
    for hs in cfg.forecaster.horizons:
        tag = horizon_tag(hs)
        bh = run.dir("eval") / f"bus_hist_GA_{tag}.csv"
        if bh.exists():
            with open(bh, newline="") as fh:
                recs = list(csv.reader(fh))[1:]
            bins = [r for r in recs if r[0] not in ("mean", "median", "p95")]
            p95 = float(next(r for r in recs if r[0] == "p95")[2])
            edges = [float(r[0]) for r in bins] + [float(bins[-1][1])]
            arts.append(plotting.plot_bus_histogram([int(r[2]) for r in bins], edges, p95,
                                                    d / f"bus_hist_GA_{tag}.png"))
    print(f"report written to {d}")
    run.manifest("report", "report", arts)
    return EXIT_OK


def cmd_pipeline(run: Run, args) -> int:
    """Every stage in order (without sweeps unless --with-sweeps)."""
    steps = [cmd_generate_data]
    if getattr(args, "with_sweeps", False):
        steps.append(lambda r, a: cmd_sweep(r, argparse.Namespace(kind="lambda")))
    steps.append(cmd_train_w2v)
    if getattr(args, "with_sweeps", False):
        steps.append(lambda r, a: cmd_sweep(r, argparse.Namespace(kind="gamma")))
    steps += [lambda r, a: cmd_train_forecaster(r, argparse.Namespace(mode="GU")),
              lambda r, a: cmd_train_forecaster(r, argparse.Namespace(mode="GA")),
              cmd_evaluate, cmd_hybrid, cmd_report]
    for step in steps:
        code = step(run, args)
        if code:
            return code
    return EXIT_OK


COMMANDS = {
    "generate-data": cmd_generate_data, "train-w2v": cmd_train_w2v, "train-forecaster": cmd_train_forecaster,
    "sweep": cmd_sweep, "evaluate": cmd_evaluate, "hybrid": cmd_hybrid, "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="w2vlab", description="Weather-to-voltage surrogate and grid-aware forecasting.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="experiment YAML file")
        sp.add_argument("--seed", type=int, default=None, help="override the global seed")
        sp.add_argument("--out", default=None, help="override the output root")
        sp.add_argument("--overwrite", action="store_true", help="replace existing artifacts")
        sp.add_argument("--parallel-seeds", type=int, default=0,
                        help="train-w2v: also run this many seed repetitions concurrently")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "train-forecaster":
            sp.add_argument("--mode", choices=("GU", "GA"), required=True)
        if name == "sweep":
            sp.add_argument("--kind", choices=("lambda", "gamma"), required=True)
        if name == "pipeline":
            sp.add_argument("--with-sweeps", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        run = Run(cfg, args.overwrite, Path(args.config).resolve().parent)
        return COMMANDS[args.command](run, args)
    except (ConfigError, MissingArtifactError, OverwriteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DatasetGenerationError, TrainingError, OSError, ValueError, RuntimeError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
