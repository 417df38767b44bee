"""Adam with coupled weight decay, plateau LR halving and early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import Parameter


class Adam:
    """Adam where weight decay is added to the gradient before the moment update."""

    def __init__(self, params: Sequence[Parameter], lr: float = 5e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"parameter {i} {p.shape} has no gradient; call backward() first")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
            p.data = p.data - update

    def state(self) -> dict:
        return {"step_count": self.step_count, "lr": self.lr}

    def load_state(self, state: dict, m: Sequence[np.ndarray], v: Sequence[np.ndarray]) -> None:
        self.step_count = int(state["step_count"])
        self.lr = float(state["lr"])
        self.m = [np.array(a, dtype=p.dtype) for a, p in zip(m, self.params)]
        self.v = [np.array(a, dtype=p.dtype) for a, p in zip(v, self.params)]


@dataclass
class PlateauScheduler:
    """Multiply the LR by ``factor`` after ``patience`` epochs without strict improvement."""

    lr: float = 5e-3
    patience: int = 10
    factor: float = 0.5
    best: float = float("inf")
    bad_epochs: int = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


@dataclass
class EarlyStopping:
    """Stop after ``patience`` consecutive non-improving epochs or at ``max_epochs``."""

    patience: int = 40
    max_epochs: int = 2000
    best: float = float("inf")
    bad_epochs: int = 0
    history: list = field(default_factory=list)

    def step(self, val_loss: float) -> bool:
        self.history.append(val_loss)
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience or len(self.history) >= self.max_epochs


def lr_schedule(val_history: Sequence[float], lr: float = 5e-3, patience: int = 10,
                factor: float = 0.5) -> float:
    """LR in effect after replaying ``val_history`` through a plateau scheduler."""
    sched = PlateauScheduler(lr=lr, patience=patience, factor=factor)
    for v in val_history:
        sched.step(v)
    return sched.lr


def early_stop(val_history: Sequence[float], patience: int = 40, max_epochs: int = 2000) -> bool:
    """Whether training should stop after the epochs in ``val_history``."""
    stopper = EarlyStopping(patience=patience, max_epochs=max_epochs)
    stop = False
    for v in val_history:
        stop = stopper.step(v)
    return stop
