"""Figures written by ``w2vlab report`` (PNG, Agg backend, no display needed)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_loss_curves(histories: dict[str, list[dict]], path, key: str = "val_total") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for label, hist in histories.items():
        ep = [r["epoch"] for r in hist]
        ax.semilogy(ep, [r[key] for r in hist], label=label, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel(key)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_sweep(rows: list[dict], path, kind: str, selected=None) -> Path:
    ok = [r for r in rows if not r["failed"]]
    x = [r["value"] for r in ok]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(x, [r["dL_v_pct"] for r in ok], "o-", label="voltage loss change")
    ax.plot(x, [r["dL_w_pct"] for r in ok], "s-", label="weather loss change")
    if selected is not None:
        ax.axvline(selected, color="k", ls="--", lw=0.8, label=f"selected {selected:.3g}")
    ax.axhline(0.0, color="0.5", lw=0.6)
    ax.set_xscale("log")
    ax.set_xlabel(kind)
    ax.set_ylabel("change vs baseline [%]")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_bus_histogram(counts, edges, p95: float, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    edges = np.asarray(edges)
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="k", lw=0.4)
    ax.axvline(p95, color="r", ls="--", lw=1.0, label=f"p95 {p95:.2e}")
    ax.set_xlabel("bus voltage RMSE [p.u.]")
    ax.set_ylabel("buses")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_bin_ratios(bins: dict, path) -> Path:
    fig, axes = plt.subplots(1, len(bins), figsize=(4.5 * len(bins), 3.4), squeeze=False)
    for ax, (feat, b) in zip(axes[0], bins.items()):
        centers = 0.5 * (b.edges[:-1] + b.edges[1:])
        ratio = [np.nan if r is None else r for r in b.ratio]
        ax.bar(centers, ratio, width=np.diff(b.edges) * 0.9, edgecolor="k", lw=0.4)
        ax.axhline(1.0, color="k", lw=0.8)
        ax.set_title(feat)
        ax.set_ylabel("RMSE ratio GA/GU")
    return _save(fig, path)


def plot_horizon_comparison(rows: list[dict], path) -> Path:
    """Bar chart of GU vs GA voltage RMSE per horizon (rows of the comparison table)."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    labels = [r["horizon"] for r in rows]
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [r["gu_voltage_rmse"] for r in rows], 0.4, label="GU")
    ax.bar(x + 0.2, [r["ga_voltage_rmse"] for r in rows], 0.4, label="GA")
    ax.set_xticks(x, labels)
    ax.set_ylabel("voltage RMSE [p.u.]")
    ax.legend(fontsize=8)
    return _save(fig, path)
