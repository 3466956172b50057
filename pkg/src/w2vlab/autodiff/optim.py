"""RAdam (with an Adam fallback) and the plateau/early-stopping controller."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


class RAdam:
    """Rectified Adam.

    While the approximated SMA length ``rho_t`` is at most 4 the variance of
    the adaptive rate is intractable and the update is bias-corrected
    momentum only; afterwards the adaptive step is scaled by the
    rectification term ``r_t``. ``rectify=False`` gives plain Adam.
    """

    def __init__(self, params, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 rectify: bool = True):
        # accepts Parameters or (name, Parameter) pairs from Module.named_parameters()
        items = list(params)
        if items and isinstance(items[0], tuple):
            names = [n for n, _ in items]
            self.params = [p for _, p in items]
        else:
            self.params = items
            names = [p.name or f"param{i}" for i, p in enumerate(self.params)]
        if len(set(names)) != len(names):
            raise ValueError("optimizer parameters need unique names")
        self.names = names
        self.lr = float(lr)
        self.beta1, self.beta2 = map(float, betas)
        self.eps = float(eps)
        self.rectify = rectify
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.rho_inf = 2.0 / (1.0 - self.beta2) - 1.0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def rectification(self, t: int) -> float | None:
        """Return ``r_t`` when the adaptive step is active at step ``t``, else None."""
        if not self.rectify:
            return 1.0
        b2t = self.beta2 ** t
        rho_t = self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        if rho_t <= 4.0:
            return None
        ri = self.rho_inf
        return math.sqrt((rho_t - 4.0) * (rho_t - 2.0) * ri / ((ri - 4.0) * (ri - 2.0) * rho_t))

    def step(self):
        for name, p in zip(self.names, self.params):
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        r = self.rectification(t)
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bias1
            if r is None:
                p.data = p.data - self.lr * m_hat
            else:
                v_hat = np.sqrt(self.v[i] / bias2)
                p.data = p.data - self.lr * r * m_hat / (v_hat + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {
            "step": np.array(self.step_count),
            "lr": np.array(self.lr),
            "betas": np.array([self.beta1, self.beta2]),
            "eps": np.array(self.eps),
            "rectify": np.array(self.rectify),
        }
        for name, m, v in zip(self.names, self.m, self.v):
            out[f"m/{name}"] = m.copy()
            out[f"v/{name}"] = v.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        self.beta1, self.beta2 = (float(x) for x in state["betas"])
        self.eps = float(state["eps"])
        self.rectify = bool(state["rectify"])
        self.rho_inf = 2.0 / (1.0 - self.beta2) - 1.0
        self.m = [np.array(state[f"m/{n}"], dtype=np.float64) for n in self.names]
        self.v = [np.array(state[f"v/{n}"], dtype=np.float64) for n in self.names]


CONTINUE, DECAY_LR, STOP = "continue", "decay_lr", "stop"


@dataclass
class TrainingController:
    """Per-epoch bookkeeping for plateau LR decay and early stopping.

    A validation loss counts as an improvement when it is below
    ``best - min_delta``. ``decay_lr`` fires once ``lr_patience`` epochs in a
    row fail to improve (that counter then restarts); ``stop`` fires once
    ``stop_patience`` epochs in a row fail to improve and takes precedence.
    """

    stop_patience: int = 20
    lr_patience: int = 8
    lr_factor: float = 0.5
    min_delta: float = 1e-6
    best: float = math.inf
    best_epoch: int = -1
    epoch: int = 0
    bad_epochs: int = 0
    bad_lr_epochs: int = 0
    stopped: bool = False
    history: list = field(default_factory=list)

    def step(self, val_loss: float) -> str:
        self.epoch += 1
        val_loss = float(val_loss)
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            self.bad_lr_epochs = 0
            decision = CONTINUE
        else:
            self.bad_epochs += 1
            self.bad_lr_epochs += 1
            if self.bad_epochs >= self.stop_patience:
                self.stopped = True
                decision = STOP
            elif self.bad_lr_epochs >= self.lr_patience:
                self.bad_lr_epochs = 0
                decision = DECAY_LR
            else:
                decision = CONTINUE
        self.history.append((self.epoch, val_loss, decision))
        return decision

    def rebase(self):
        """Forget the best loss and counters (used at a training stage boundary)."""
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0
        self.bad_lr_epochs = 0
        self.stopped = False


def controller_step(ctrl: TrainingController, val_loss: float) -> str:
    return ctrl.step(val_loss)
