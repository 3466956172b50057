"""Windowed weather forecasters with one independent branch per weather feature.

Grid-unaware (GU) training minimises ``mse(y_hat, y)``. Grid-aware (GA)
training adds ``gamma * mse(W2V_v(y_hat_step), s_step)`` averaged over the
horizon steps, with the W2V surrogate frozen. GA runs share their first
stage with GU so a GU run of the same seed is reproduced bit for bit.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import (
    DECAY_LR, STOP, Linear, Module, Parameter, RAdam, Tensor, TrainingController, TrainingError, no_grad,
)
from .dataset import NexusDataset

log = logging.getLogger(__name__)


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class WindowGeometry:
    k: int      # input length
    lead: int   # steps from the last input to the first target
    h: int      # horizon length

    def __post_init__(self):
        if min(self.k, self.lead, self.h) < 1:
            raise WindowError(f"window geometry needs k, lead, h >= 1, got {self}")

    @property
    def span(self) -> int:
        return self.k + self.lead + self.h - 1

    def indices(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Input and target time indices for anchor ``t``."""
        x_idx = np.arange(t - self.k + 1, t + 1)
        y_idx = np.arange(t + self.lead, t + self.lead + self.h)
        return x_idx, y_idx


@dataclass(frozen=True, eq=False)
class ForecastWindow:
    t: int
    x: np.ndarray   # [k, S, N]
    y: np.ndarray   # [h, S, N]
    s: np.ndarray   # [h, B]


@dataclass(eq=False)
class WindowSet:
    """Stacked windows: ``X [n,k,S,N]``, ``Y [n,h,S,N]``, ``V [n,h,B]``, anchors ``t``."""

    geometry: WindowGeometry
    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i) -> ForecastWindow:
        return ForecastWindow(int(self.t[i]), self.X[i], self.Y[i], self.V[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def take(self, idx) -> "WindowSet":
        return WindowSet(self.geometry, self.t[idx], self.X[idx], self.Y[idx], self.V[idx], 0)


def valid_anchors(times: np.ndarray, geom: WindowGeometry) -> tuple[np.ndarray, int]:
    """Anchors whose whole span is present in ``times``; also the count skipped for gaps."""
    times = np.asarray(times, dtype=np.int64)
    if len(times) == 0 or times.max() - times.min() + 1 < geom.span:
        n = 0 if len(times) == 0 else int(times.max() - times.min() + 1)
        raise WindowError(f"split covers {n} steps; geometry {geom} needs at least {geom.span}")
    present = set(times.tolist())
    lo, hi = int(times.min()) + geom.k - 1, int(times.max()) - geom.lead - geom.h + 1
    good, skipped = [], 0
    for t in range(lo, hi + 1):
        if all(u in present for u in range(t - geom.k + 1, t + geom.lead + geom.h)):
            good.append(t)
        else:
            skipped += 1
    return np.array(good, dtype=np.int64), skipped


def make_windows(dataset: NexusDataset, geom: WindowGeometry, part: str = "train",
                 split: str = "chrono") -> WindowSet:
    """All windows inside one chronological split part; windows never touch dropped steps."""
    if split != "chrono":
        raise WindowError("forecasting windows are built on the chronological split only")
    pos = dataset.splits[split][part]
    times = dataset.time[pos]
    anchors, skipped = valid_anchors(times, geom)
    row_of = {int(t): int(i) for t, i in zip(times, pos)}
    grid = dataset.weather_grid()
    xs = np.array([[row_of[int(u)] for u in geom.indices(t)[0]] for t in anchors], dtype=np.int64)
    ys = np.array([[row_of[int(u)] for u in geom.indices(t)[1]] for t in anchors], dtype=np.int64)
    S, N = grid.shape[1], grid.shape[2]
    if len(anchors) == 0:
        return WindowSet(geom, anchors, np.zeros((0, geom.k, S, N)), np.zeros((0, geom.h, S, N)),
                         np.zeros((0, geom.h, dataset.B)), skipped)
    return WindowSet(geom, anchors, grid[xs], grid[ys], dataset.voltage[ys], skipped)


# -- model -------------------------------------------------------------------------
@dataclass
class BranchSpec:
    kind: str = "feedforward"   # or "attention"
    d_model: int = 16
    hidden: int = 64
    depth: int = 2              # attention encoder layers
    heads: int = 2
    dropout: float = 0.2        # attention branches only
    ff_mult: int = 2
    skip: bool = False          # optional temporal linear skip, initialized to persistence

    def __post_init__(self):
        if self.kind not in ("feedforward", "attention"):
            raise ValueError(f"unknown branch kind {self.kind!r}")
        if self.kind == "attention" and self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")


class _TemporalSkip(Module):
    """Per-location linear map over the k inputs: ``y[:, j, s] = sum_t a[j, t] x[:, t, s] + c[j]``.

    Weights are shared across locations and start at the last-observed-value
    forecast, so an untrained branch already reproduces persistence.
    """

    def __init__(self, geom: WindowGeometry):
        a = np.zeros((geom.h, geom.k))
        a[:, -1] = 1.0
        self.weight = Parameter(a, name="weight")
        self.bias = Parameter(np.zeros(geom.h), name="bias")

    def forward(self, x: Tensor) -> Tensor:
        # [b, k, S] -> [b, S, k] @ [k, h] -> [b, h, S]
        y = ad.matmul(ad.swap_last(x), ad.swap_last(self.weight)) + self.bias
        return ad.swap_last(y)


def _with_skip(branch, x: Tensor, y: Tensor) -> Tensor:
    return y if branch.skip is None else y + branch.skip(x)


class FeedForwardBranch(Module):
    """[b, k, S] -> project S->d, add temporal embedding, 2 hidden layers, head -> [b, h, S]."""

    def __init__(self, geom: WindowGeometry, S: int, spec: BranchSpec, rng: np.random.Generator):
        d = spec.d_model
        self.proj = Linear(S, d, rng)
        self.embed = Parameter(rng.normal(0.0, 0.02, size=(geom.k, d)), name="embed")
        self.hidden = [Linear(geom.k * d, spec.hidden, rng, "relu"),
                       Linear(spec.hidden, spec.hidden, rng, "relu")]
        self.head = Linear(spec.hidden, geom.h * S, rng)
        self.skip = _TemporalSkip(geom) if spec.skip else None
        self.k, self.h, self.S, self.d = geom.k, geom.h, S, d

    def forward(self, x, rng=None) -> Tensor:
        b = x.shape[0]
        e = self.proj(x) + self.embed
        z = e.reshape(b, self.k * self.d)
        for layer in self.hidden:
            z = layer(z)
        return _with_skip(self, x, self.head(z).reshape(b, self.h, self.S))


class _EncoderLayer(Module):
    def __init__(self, d: int, heads: int, ff: int, dropout: float, rng):
        self.q, self.k_, self.v = Linear(d, d, rng), Linear(d, d, rng), Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self.ln1_g, self.ln1_b = Parameter(np.ones(d), "ln1_g"), Parameter(np.zeros(d), "ln1_b")
        self.ff1, self.ff2 = Linear(d, ff, rng, "relu"), Linear(ff, d, rng)
        self.ln2_g, self.ln2_b = Parameter(np.ones(d), "ln2_g"), Parameter(np.zeros(d), "ln2_b")
        self.heads, self.d, self.dropout = heads, d, dropout

    def _split(self, t: Tensor, b: int, L: int) -> Tensor:
        # [b, L, d] -> [b, heads, L, d/heads]
        return t.reshape(b, L, self.heads, self.d // self.heads).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, rng=None) -> Tensor:
        b, L, _ = x.shape
        dh = self.d // self.heads
        q, k, v = (self._split(f(x), b, L) for f in (self.q, self.k_, self.v))
        att = ad.softmax(ad.matmul(q, ad.swap_last(k)) * (1.0 / math.sqrt(dh)), axis=-1)
        att = ad.dropout(att, self.dropout, rng, self.training)
        ctx = ad.matmul(att, v).transpose(0, 2, 1, 3).reshape(b, L, self.d)
        x = ad.layer_norm(x + ad.dropout(self.o(ctx), self.dropout, rng, self.training), self.ln1_g, self.ln1_b)
        f = ad.dropout(self.ff2(self.ff1(x)), self.dropout, rng, self.training)
        return ad.layer_norm(x + f, self.ln2_g, self.ln2_b)


class AttentionBranch(Module):
    """Self-attention encoder over the k time steps of one feature, linear head to [h, S]."""

    def __init__(self, geom: WindowGeometry, S: int, spec: BranchSpec, rng: np.random.Generator):
        d = spec.d_model
        self.proj = Linear(S, d, rng)
        self.embed = Parameter(rng.normal(0.0, 0.02, size=(geom.k, d)), name="embed")
        self.layers = [_EncoderLayer(d, spec.heads, spec.ff_mult * d, spec.dropout, rng)
                       for _ in range(spec.depth)]
        self.head = Linear(geom.k * d, geom.h * S, rng)
        self.skip = _TemporalSkip(geom) if spec.skip else None
        self.k, self.h, self.S, self.d = geom.k, geom.h, S, d

    def forward(self, x, rng=None) -> Tensor:
        b = x.shape[0]
        z = self.proj(x) + self.embed
        for layer in self.layers:
            z = layer(z, rng)
        return _with_skip(self, x, self.head(z.reshape(b, self.k * self.d)).reshape(b, self.h, self.S))


_BRANCHES = {"feedforward": FeedForwardBranch, "attention": AttentionBranch}


class ForecasterModel(Module):
    def __init__(self, geom: WindowGeometry, S: int, N: int, spec: BranchSpec | None = None, seed: int = 0):
        spec = spec or BranchSpec()
        rng = np.random.default_rng(seed)
        self.branches = [_BRANCHES[spec.kind](geom, S, spec, rng) for _ in range(N)]
        self.geometry, self.S, self.N, self.spec, self.seed = geom, S, N, spec, seed

    def forward(self, x, rng=None) -> Tensor:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        g = self.geometry
        if x.ndim != 4 or x.shape[1:] != (g.k, self.S, self.N):
            raise ad.ShapeError("forecast", x.shape, (None, g.k, self.S, self.N))
        outs = [br(Tensor(np.ascontiguousarray(x[..., n])), rng) for n, br in enumerate(self.branches)]
        return ad.stack(outs, axis=-1)

    def zero_head(self):
        for br in self.branches:
            br.head.weight.data[:] = 0.0
            br.head.bias.data[:] = 0.0
            if br.skip is not None:
                br.skip.weight.data[:] = 0.0
                br.skip.bias.data[:] = 0.0


def forecast(model: ForecasterModel, x: np.ndarray, batch: int = 2048) -> np.ndarray:
    """Plain-array forecasts; accepts one window ``[k,S,N]`` or a batch ``[n,k,S,N]``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    was_training = model.training
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(x), batch):
            out.append(model(x[i:i + batch]).data)
    model.train(was_training)
    g = model.geometry
    res = np.concatenate(out) if out else np.zeros((0, g.h, model.S, model.N))
    return res[0] if single else res


# -- losses ------------------------------------------------------------------------
def to_w2v_rows(y: Tensor) -> Tensor:
    """[b, h, S, N] -> [b*h, W] with the feature-major column layout of the dataset."""
    b, h, S, N = y.shape
    return y.transpose(0, 1, 3, 2).reshape(b * h, N * S)


def gu_loss(model, x, y, rng=None) -> Tensor:
    return ad.mse(model(x, rng), y)


def ga_loss(model, x, y, s, w2v, gamma: float, rng=None):
    """Return (total, L_w part, L_v part) for one batch.

    Every horizon step goes through the voltage path of ``w2v``; since all
    steps have the same size, the global mean equals the mean over steps of
    the per-step MSE.
    """
    y_hat = model(x, rng)
    l_w = ad.mse(y_hat, y)
    rows = to_w2v_rows(y_hat)
    arch = getattr(w2v, "arch", None)
    if arch is not None and rows.shape[-1] != arch.W:
        raise ad.ShapeError("ga_loss weather width", rows.shape, (arch.W,))
    s = np.asarray(s, dtype=np.float64)
    v_hat = w2v.voltage(rows)
    target = s.reshape(-1, s.shape[-1])
    if v_hat.shape != target.shape:
        raise ad.ShapeError("ga_loss voltage width", v_hat.shape, target.shape)
    l_v = ad.mse(v_hat, target)
    return l_w + gamma * l_v, l_w, l_v


# -- training ----------------------------------------------------------------------
@dataclass
class ForecastTrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    stop_patience: int = 10
    lr_patience: int = 5
    lr_factor: float = 0.5
    min_delta: float = 1e-6
    stage1_fraction: float = 2.0 / 3.0
    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (2.0 / 3.0 - 1e-12 <= self.stage1_fraction <= 1.0):
            raise ValueError("stage1_fraction must lie in [2/3, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 are required")

    @property
    def stage1_epochs(self) -> int:
        return math.ceil(self.stage1_fraction * self.epochs - 1e-9)


@dataclass(eq=False)
class ForecastRun:
    model: ForecasterModel
    mode: str
    gamma: float
    seed: int
    geometry: WindowGeometry
    history: list
    stage_boundary: int
    best_epoch: int
    wall_time: float = field(default=0.0, compare=False)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(self.history[0]))
            wr.writeheader()
            for row in self.history:
                wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return path


def _eval_losses(model, ws: WindowSet, w2v, batch: int = 1024) -> tuple[float, float]:
    """Validation (L_w, L_v) over a window set; L_v is nan without a surrogate."""
    pred = forecast(model, ws.X, batch)
    l_w = float(np.mean((pred - ws.Y) ** 2))
    if w2v is None:
        return l_w, float("nan")
    from .w2v import predict_voltage
    v = predict_voltage(w2v, pred.transpose(0, 1, 3, 2).reshape(len(pred) * pred.shape[1], -1))
    return l_w, float(np.mean((v - ws.V.reshape(v.shape)) ** 2))


def train_forecaster(model: ForecasterModel, windows, mode: str, w2v, config: ForecastTrainConfig) -> ForecastRun:
    """Two-stage schedule shared by GU and GA.

    Stage 1 (epochs ``1..n1``) is GU-only and never early-stops. At the
    boundary the early-stopping controller is rebased and stage 2 begins:
    GA switches on the voltage term there, GU simply continues. The best
    validation epoch of the final stage is restored at the end.
    """
    if mode not in ("GU", "GA"):
        raise ValueError(f"mode must be 'GU' or 'GA', got {mode!r}")
    if mode == "GA" and w2v is None:
        raise ValueError("GA training needs a trained W2V model")
    train_ws, val_ws = (windows["train"], windows["val"]) if isinstance(windows, dict) else windows
    if len(train_ws) == 0 or len(val_ws) == 0:
        raise WindowError("train and validation window sets must be non-empty")
    if w2v is not None:
        w2v.freeze()
        w2v.eval()
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    opt = RAdam(model.named_parameters(), lr=config.lr)
    ctrl = TrainingController(config.stop_patience, config.lr_patience, config.lr_factor, config.min_delta)
    n1 = config.stage1_epochs
    gamma = float(config.gamma) if mode == "GA" else 0.0
    history: list[dict] = []
    best = (math.inf, model.state_dict(), 0)
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        stage = 1 if epoch <= n1 else 2
        if epoch == n1 + 1:
            ctrl.rebase()
            best = (math.inf, model.state_dict(), epoch - 1)
        joint = mode == "GA" and stage == 2
        model.train()
        order = rng.permutation(len(train_ws))
        sums = np.zeros(2)
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            opt.zero_grad()
            if joint:
                total, l_w, l_v = ga_loss(model, train_ws.X[idx], train_ws.Y[idx], train_ws.V[idx], w2v, gamma, rng)
                sums += len(idx) * np.array([float(l_w.data), float(l_v.data)])
            else:
                total = gu_loss(model, train_ws.X[idx], train_ws.Y[idx], rng)
                sums[0] += len(idx) * float(total.data)
            if not np.isfinite(total.data):
                raise TrainingError(f"non-finite {mode} loss at epoch {epoch}")
            total.backward()
            opt.step()
        val_w, val_v = _eval_losses(model, val_ws, w2v)
        val_total = val_w + gamma * val_v if joint else val_w
        if not np.isfinite(val_total):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append({
            "epoch": epoch, "stage": stage, "lr": opt.lr,
            "train_w": sums[0] / len(order), "train_v": sums[1] / len(order) if joint else float("nan"),
            "val_w": val_w, "val_v": val_v, "val_total": val_total,
        })
        if val_total < best[0]:
            best = (val_total, model.state_dict(), epoch)
        decision = ctrl.step(val_total)
        if decision == DECAY_LR:
            opt.lr *= config.lr_factor
        elif decision == STOP and stage == 2:
            break
    model.load_state_dict(best[1])
    model.eval()
    return ForecastRun(model=model, mode=mode, gamma=gamma, seed=config.seed, geometry=model.geometry,
                       history=history, stage_boundary=min(n1, epoch), best_epoch=best[2],
                       wall_time=time.perf_counter() - t0)


# -- gamma selection ---------------------------------------------------------------
@dataclass
class GammaSelection:
    gamma: float
    sweep: object                  # evalkit.SweepResult over coarse + refined candidates
    runs: dict = field(default_factory=dict, repr=False)


def select_gamma(candidates, windows, w2v, model_factory, config: ForecastTrainConfig, cap: float = 0.05,
                 refine: int = 3, geometric_refine: bool = True) -> GammaSelection:
    """Coarse scan over ``candidates`` then a refined log scan around the best.

    ``model_factory()`` returns a freshly initialised forecaster with the
    configured seed. Every candidate uses the same seed and schedule. The
    criterion is the largest validation voltage-MSE reduction whose weather
    MSE increase stays within ``cap``.
    """
    from .evalkit import run_sweep
    val_ws = windows["val"]
    runs = {}

    def train_fn(g):
        run = train_forecaster(model_factory(), windows, "GA" if g > 0 else "GU", w2v,
                               _with(config, gamma=float(g)))
        runs[float(g)] = run
        l_w, l_v = _eval_losses(run.model, val_ws, w2v)
        return {"L_v": l_v, "L_w": l_w}

    coarse = sorted(float(c) for c in candidates)
    base = train_fn(0.0)
    sweep = run_sweep("gamma", coarse, train_fn, base, cap)
    if refine and sweep.selected is not None and len(coarse) > 1:
        i = coarse.index(sweep.selected)
        lo = coarse[max(i - 1, 0)]
        hi = coarse[min(i + 1, len(coarse) - 1)]
        pts = np.geomspace(lo, hi, refine + 2) if geometric_refine else np.linspace(lo, hi, refine + 2)
        extra = [float(p) for p in pts if not any(np.isclose(p, c) for c in coarse)]
        if extra:
            sweep = run_sweep("gamma", coarse + extra, train_fn, base, cap, cache=sweep)
    if sweep.selected is None:
        log.warning("no gamma candidate met the %.1f%% weather cap; falling back to GU (gamma=0)", 100 * cap)
    return GammaSelection(gamma=0.0 if sweep.selected is None else sweep.selected, sweep=sweep, runs=runs)


def _with(cfg: ForecastTrainConfig, **kw) -> ForecastTrainConfig:
    d = asdict(cfg)
    d.update(kw)
    return ForecastTrainConfig(**d)
