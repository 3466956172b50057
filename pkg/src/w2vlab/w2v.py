"""Weather-to-voltage (W2V) surrogate: one encoder, a weather decoder and a voltage decoder.

    z = E(w),   w_hat = D_w(z),   v_hat = D_v(z)
    loss = mse(v_hat, v) + lam * mse(w_hat, w)

The encoder is a single linear layer with identity activation so that a
PCA warm start (weight ``P.T``, bias ``-P.T @ mu``) is reproduced exactly.
An optional residual hidden block after it adds nonlinearity; its last
layer starts at zero so the warm start is still exact at build time.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    MLP, DECAY_LR, STOP, Linear, Module, RAdam, Tensor, TrainingController,
    TrainingError, load_checkpoint, mse, no_grad, save_checkpoint,
)
from .dataset import NexusDataset
from .pca import PcaModel

log = logging.getLogger(__name__)


class W2VBuildError(ValueError):
    pass


@dataclass
class W2VArch:
    W: int
    B: int
    K: int
    hidden_w: int = 64          # weather decoder hidden width
    hidden_v: int = 64          # voltage decoder hidden width
    encoder_hidden: int = 0     # 0 disables the residual encoder block
    out_act: str = "identity"   # or "sigmoid": targets live in [0, 1]
    lam: float = 0.8

    def __post_init__(self):
        for name in ("W", "B", "K", "hidden_w", "hidden_v"):
            if int(getattr(self, name)) < 1:
                raise W2VBuildError(f"{name} must be >= 1")
        if self.encoder_hidden < 0:
            raise W2VBuildError("encoder_hidden must be >= 0")
        if self.lam < 0:
            raise W2VBuildError("lam must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class W2VModel(Module):
    kind = "w2v"

    def __init__(self, arch: W2VArch, rng: np.random.Generator):
        self.arch = arch
        self.encoder = Linear(arch.W, arch.K, rng, "identity")
        if arch.encoder_hidden:
            self.enc_block = MLP([arch.K, arch.encoder_hidden, arch.K], rng)
            last = self.enc_block.layers[-1]
            last.weight.data[:] = 0.0
            last.bias.data[:] = 0.0
        else:
            self.enc_block = None
        self.dec_w = MLP([arch.K, arch.hidden_w, arch.W], rng, out_act=arch.out_act)
        self.dec_v = MLP([arch.K, arch.hidden_v, arch.B], rng, out_act=arch.out_act)
        self.lam = float(arch.lam)

    def encode(self, w) -> Tensor:
        z = self.encoder(w)
        if self.enc_block is not None:
            z = z + self.enc_block(z)
        return z

    def forward(self, w):
        w = w if isinstance(w, Tensor) else Tensor(np.asarray(w, dtype=np.float64))
        if w.shape[-1] != self.arch.W:
            raise W2VBuildError(f"W2V expects {self.arch.W} weather columns, got {w.shape[-1]}")
        z = self.encode(w)
        return z, self.dec_w(z), self.dec_v(z)

    def voltage(self, w) -> Tensor:
        """Only the voltage path E -> D_v (what the forecasters differentiate through)."""
        return self.dec_v(self.encode(w))


class MLPBaseline(Module):
    """Direct W -> h -> h -> h -> B map; it has no latent or weather head."""

    kind = "mlp3"

    def __init__(self, W: int, B: int, hidden: int, rng: np.random.Generator, out_act: str = "identity"):
        self.net = MLP([W, hidden, hidden, hidden, B], rng, out_act=out_act)
        self.hidden = hidden
        self.lam = 0.0
        self.arch = None

    def forward(self, w):
        w = w if isinstance(w, Tensor) else Tensor(np.asarray(w, dtype=np.float64))
        return None, None, self.net(w)

    def voltage(self, w) -> Tensor:
        return self.net(w)


def build_w2v(arch: W2VArch, pca: PcaModel | None = None, seed: int = 0) -> W2VModel:
    """Build a W2V model; with ``pca`` the encoder is the exact PCA projection.

    Random draws happen for every layer in a fixed order whether or not a PCA
    is supplied, so PCA-init and random-init builds share decoder weights
    under the same seed.
    """
    if pca is not None:
        if pca.W != arch.W:
            raise W2VBuildError(f"PCA is fitted on {pca.W} columns, arch expects W={arch.W}")
        if pca.K != arch.K:
            raise W2VBuildError(f"PCA keeps K={pca.K} components, arch expects K={arch.K}")
    model = W2VModel(arch, np.random.default_rng(seed))
    if pca is not None:
        P = pca.projection
        model.encoder.weight.data = P.T.copy()
        model.encoder.bias.data = -(P.T @ pca.mean)
    return model


def w2v_forward(model, w):
    return model(w)


def w2v_loss(model, w, v):
    """Return (total, L_v, L_w) tensors. ``L_w`` is None for the MLP baseline."""
    _, w_hat, v_hat = model(w)
    l_v = mse(v_hat, v)
    if w_hat is None:
        return l_v, l_v, None
    l_w = mse(w_hat, w)
    return l_v + model.lam * l_w, l_v, l_w


def mlp_params(W: int, B: int, h: int) -> int:
    return W * h + h + 2 * (h * h + h) + h * B + B


def solve_mlp_width(W: int, B: int, target: int, tol: float = 0.10) -> int:
    # 2h^2 + (W + B + 3)h + B - target = 0
    a, b, c = 2.0, W + B + 3.0, B - target
    root = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    best = None
    for h in {max(1, math.floor(root)), max(1, math.ceil(root))}:
        err = abs(mlp_params(W, B, h) - target) / target
        if best is None or err < best[1] or (err == best[1] and h < best[0]):
            best = (h, err)
    if best[1] > tol:
        raise W2VBuildError(
            f"no hidden width gets the MLP within {tol:.0%} of {target} parameters "
            f"(closest h={best[0]} has {mlp_params(W, B, best[0])}); adjust the W2V widths")
    return best[0]


def build_baseline(kind: str, arch: W2VArch, seed: int = 0):
    if kind == "ae_random":
        return build_w2v(arch, None, seed)
    if kind == "mlp3":
        target = W2VModel(arch, np.random.default_rng(0)).num_parameters()
        h = solve_mlp_width(arch.W, arch.B, target)
        return MLPBaseline(arch.W, arch.B, h, np.random.default_rng(seed), arch.out_act)
    raise W2VBuildError(f"unknown baseline {kind!r}; expected 'mlp3' or 'ae_random'")


# -- training -------------------------------------------------------------------
@dataclass
class W2VTrainConfig:
    epochs: int = 500
    batch_size: int = 64
    lr: float = 1e-3
    stop_patience: int = 20
    lr_patience: int = 8
    lr_factor: float = 0.5
    min_delta: float = 1e-6
    seed: int = 0
    rectify: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 are required")


@dataclass
class TrainReport:
    kind: str
    seed: int
    history: list                   # one dict per epoch (epoch 0 = before training)
    best_epoch: int
    epochs_run: int
    test: dict                      # rmse/mae, normalized and p.u.
    lam: float
    wall_time: float = field(default=0.0, compare=False)

    @property
    def best_val(self) -> float:
        return min(r["val_total"] for r in self.history)

    @property
    def final_val(self) -> float:
        """Validation total loss of the restored (best-epoch) parameters."""
        return next(r["val_total"] for r in self.history if r["epoch"] == self.best_epoch)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = list(self.history[0])
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols)
            wr.writeheader()
            for row in self.history:
                wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return path

    def summary_row(self) -> dict:
        row = {"kind": self.kind, "seed": self.seed, "lam": self.lam, "best_epoch": self.best_epoch,
               "epochs_run": self.epochs_run, "val_total": self.final_val}
        row.update(self.test)
        return row


def append_ledger_row(path, row: dict) -> Path:
    """Append one summary row to a results CSV, writing the header on first use."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(row))
        if new:
            wr.writeheader()
        wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


def _losses(model, w: np.ndarray, v: np.ndarray) -> tuple[float, float, float]:
    with no_grad():
        total, l_v, l_w = w2v_loss(model, w, v)
    return float(total.data), float(l_v.data), (float(l_w.data) if l_w is not None else 0.0)


def predict_voltage(model, w: np.ndarray, batch: int = 4096) -> np.ndarray:
    """Normalized voltage predictions for normalized weather rows (no graph)."""
    w = np.asarray(w, dtype=np.float64)
    lead = w.shape[:-1]
    flat = w.reshape(-1, w.shape[-1])
    out = []
    with no_grad():
        for i in range(0, len(flat), batch):
            out.append(model.voltage(Tensor(flat[i:i + batch])).data)
    res = np.concatenate(out) if out else np.zeros((0, 0))
    return res.reshape(*lead, -1)


def voltage_metrics(model, dataset: NexusDataset, part: str = "test", split: str = "random") -> dict:
    w, v = dataset.subset(split, part)
    pred = predict_voltage(model, w)
    err = pred - v
    err_pu = dataset.voltage_scaler.invert(pred) - dataset.voltage_scaler.invert(v)
    return {
        "rmse_norm": float(np.sqrt(np.mean(err ** 2))),
        "mae_norm": float(np.mean(np.abs(err))),
        "rmse_pu": float(np.sqrt(np.mean(err_pu ** 2))),
        "mae_pu": float(np.mean(np.abs(err_pu))),
    }


def train_w2v(model, dataset: NexusDataset, config: W2VTrainConfig) -> TrainReport:
    """Mini-batch RAdam on the random train split; early stop on validation total loss.

    The parameters of the best validation epoch are restored before the test
    metrics are computed.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    w_tr, v_tr = dataset.subset("random", "train")
    w_va, v_va = dataset.subset("random", "val")
    opt = RAdam(model.named_parameters(), lr=config.lr, rectify=config.rectify)
    ctrl = TrainingController(config.stop_patience, config.lr_patience, config.lr_factor, config.min_delta)

    def record(epoch):
        tr, va = _losses(model, w_tr, v_tr), _losses(model, w_va, v_va)
        if not all(np.isfinite(tr + va)):
            raise TrainingError(f"non-finite loss at epoch {epoch} (train {tr}, val {va})")
        row = {"epoch": epoch, "lr": opt.lr, "train_total": tr[0], "train_v": tr[1], "train_w": tr[2],
               "val_total": va[0], "val_v": va[1], "val_w": va[2]}
        history.append(row)
        return va[0]

    history: list[dict] = []
    best_val = record(0)
    best_state, best_epoch = model.state_dict(), 0
    epoch = 0
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(w_tr))
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            opt.zero_grad()
            total, _, _ = w2v_loss(model, w_tr[idx], v_tr[idx])
            if not np.isfinite(total.data):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            total.backward()
            opt.step()
        val = record(epoch)
        if val < best_val:
            best_val, best_state, best_epoch = val, model.state_dict(), epoch
        decision = ctrl.step(val)
        if decision == DECAY_LR:
            opt.lr *= config.lr_factor
        elif decision == STOP:
            break
    model.eval()
    model.load_state_dict(best_state)
    report = TrainReport(
        kind=getattr(model, "kind", "w2v"), seed=config.seed, history=history, best_epoch=best_epoch,
        epochs_run=epoch, test=voltage_metrics(model, dataset, "test"), lam=float(model.lam),
        wall_time=time.perf_counter() - t0)
    return report


# -- checkpoints -----------------------------------------------------------------
def save_w2v(path, model, optimizer: RAdam | None = None, meta: dict | None = None) -> Path:
    info = {"kind": model.kind}
    if model.kind == "mlp3":
        info.update(W=model.net.widths[0], B=model.net.widths[-1], hidden=model.hidden,
                    out_act=model.net.layers[-1].act)
    else:
        info["arch"] = model.arch.to_dict()
    info.update(meta or {})
    return save_checkpoint(path, model.state_dict(), optimizer.state_dict() if optimizer else None,
                           meta=info)


def load_w2v(path):
    ck = load_checkpoint(path)
    meta = ck["meta"]
    if meta.get("kind") == "mlp3":
        model = MLPBaseline(meta["W"], meta["B"], meta["hidden"], np.random.default_rng(0), meta["out_act"])
    else:
        model = W2VModel(W2VArch(**meta["arch"]), np.random.default_rng(0))
    model.load_state_dict(ck["params"])
    model.eval()
    return model


def parameter_checksum(model) -> str:
    """sha256 over the raw bytes of every parameter, in registration order."""
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
