"""The training loop: segment batching, validation, LR plateaus, early stopping."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import LossConfig, mae, mr_stft
from .models import receptive_field
from .optim import Adam, EarlyStopping, PlateauScheduler

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "val_loss", "val_mae", "val_mrstft", "lr")


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    lr: float = 5e-3
    weight_decay: float = 1e-4
    lr_patience: int = 10
    lr_factor: float = 0.5
    early_stop_patience: int = 40
    max_epochs: int = 2000
    segment_length: int = 112640
    batch_size: int = 6
    sample_rate: int = 44100
    seed: int = 0

    def validate(self, spec=None) -> "TrainConfig":
        for name in ("lr", "lr_patience", "lr_factor", "early_stop_patience", "max_epochs",
                     "segment_length", "batch_size", "sample_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if spec is not None and spec.family != "LSTM" and self.segment_length < receptive_field(spec):
            raise ValueError(f"segment_length {self.segment_length} is shorter than the receptive "
                             f"field ({receptive_field(spec)} samples)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    history: list
    stopped_early: bool


def crop_segments(pairs, length: int) -> list[tuple[int, int, int]]:
    """Non-overlapping (pair index, start, length) crops; short files are used whole."""
    segs = []
    for i, (x, _) in enumerate(pairs):
        n = len(x)
        if n < length:
            if n:
                segs.append((i, 0, n))
            continue
        segs.extend((i, s, length) for s in range(0, n - length + 1, length))
    return segs


def _as_input(a: np.ndarray) -> T.Tensor:
    return T.Tensor(a.reshape(1, -1), dtype=np.float32)


def evaluate_segments(model, pairs, segs, loss_cfg: LossConfig) -> dict:
    """Mean composite loss and its components over the given crops (no graph)."""
    maes, stfts = [], []
    with T.no_grad():
        for i, s, n in segs:
            x, y = pairs[i]
            pred = model(_as_input(x[s:s + n]))
            target = _as_input(y[s:s + n])
            maes.append(mae(pred, target).item())
            stfts.append(mr_stft(pred, target, loss_cfg).item() if loss_cfg.alpha else 0.0)
    m = float(np.mean(maes))
    st = float(np.mean(stfts))
    return {"loss": m + loss_cfg.alpha * st, "mae": m, "mrstft": st}


def write_metrics(path, history: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in METRIC_COLUMNS})


def _optimizer_tensors(model, opt: Adam) -> dict:
    names = [n for n, _ in model.named_parameters()]
    out = {f"optim.m.{n}": m for n, m in zip(names, opt.m)}
    out.update({f"optim.v.{n}": v for n, v in zip(names, opt.v)})
    return out


def train(model, train_pairs, val_pairs, cfg: TrainConfig, loss_cfg: Optional[LossConfig] = None,
          out_dir=".", resume: bool = False) -> TrainResult:
    """Fit ``model`` to paired audio and keep the best-validation checkpoint.

    Writes ``best.ckpt``, ``last.ckpt`` and ``metrics.csv`` to ``out_dir``.
    With ``resume=True`` training continues from ``last.ckpt`` and follows
    the same trajectory an uninterrupted run would have taken.
    """
    loss_cfg = loss_cfg or LossConfig()
    cfg.validate(model.spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path, last_path = out_dir / "best.ckpt", out_dir / "last.ckpt"

    params = model.parameters()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = PlateauScheduler(lr=cfg.lr, patience=cfg.lr_patience, factor=cfg.lr_factor)
    stopper = EarlyStopping(patience=cfg.early_stop_patience, max_epochs=cfg.max_epochs)
    history: list = []
    start_epoch = 1
    best_val = math.inf

    if resume and last_path.exists():
        ckpt = load_checkpoint(last_path)
        model.load_state_dict(ckpt.model_state())
        st = ckpt.training_state
        names = [n for n, _ in model.named_parameters()]
        opt.load_state(st["optimizer"], [ckpt.tensors[f"optim.m.{n}"] for n in names],
                       [ckpt.tensors[f"optim.v.{n}"] for n in names])
        sched = PlateauScheduler(**st["scheduler"])
        stopper = EarlyStopping(**st["early_stopping"])
        stopper.max_epochs = cfg.max_epochs
        history = st["history"]
        best_val = st["best_val_loss"]
        start_epoch = st["epoch"] + 1
        opt.lr = sched.lr
        # a run cut short by a smaller epoch cap may continue; one that hit patience may not
        if stopper.bad_epochs >= stopper.patience or start_epoch > cfg.max_epochs:
            return TrainResult(best_path, last_path, history, True)

    train_segs = crop_segments(train_pairs, cfg.segment_length)
    val_segs = crop_segments(val_pairs, cfg.segment_length)
    if not train_segs or not val_segs:
        raise ValueError("dataset needs non-empty train and val splits")

    stop = False
    for epoch in range(start_epoch, cfg.max_epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_segs))
        running = 0.0
        for b in range(0, len(order), cfg.batch_size):
            batch = order[b:b + cfg.batch_size]
            opt.zero_grad()
            for j in batch:
                i, s, n = train_segs[j]
                x, y = train_pairs[i]
                pred = model(_as_input(x[s:s + n]))
                target = _as_input(y[s:s + n])
                loss = mae(pred, target)
                if loss_cfg.alpha:
                    loss = loss + loss_cfg.alpha * mr_stft(pred, target, loss_cfg)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"non-finite training loss at epoch {epoch}, segment {j} "
                                         f"(file {i}, offset {s}); lr={opt.lr:g}")
                (loss * (1.0 / len(batch))).backward(retain_graph=False)
                running += value
            opt.step()
        train_loss = running / len(order)

        val = evaluate_segments(model, val_pairs, val_segs, loss_cfg)
        if not math.isfinite(val["loss"]):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val["loss"],
               "val_mae": val["mae"], "val_mrstft": val["mrstft"], "lr": opt.lr}
        history.append(row)
        logger.info("epoch %d train %.5f val %.5f (mae %.5f, mr-stft %.5f) lr %.2e",
                    epoch, train_loss, val["loss"], val["mae"], val["mrstft"], opt.lr)

        improved = val["loss"] < best_val
        opt.lr = sched.step(val["loss"])
        stop = stopper.step(val["loss"])
        state = {
            "epoch": epoch,
            "best_val_loss": min(best_val, val["loss"]),
            "lr": opt.lr,
            "seed": cfg.seed,
            "optimizer": opt.state(),
            "scheduler": dataclasses.asdict(sched),
            "early_stopping": dataclasses.asdict(stopper),
            "history": history,
            "train_config": cfg.to_dict(),
            "loss_config": loss_cfg.to_dict(),
            "stopped": stop,
        }
        if improved:
            best_val = val["loss"]
            save_checkpoint(best_path, model, dict(state, val_loss=val["loss"]))
        save_checkpoint(last_path, model, state, _optimizer_tensors(model, opt))
        write_metrics(out_dir / "metrics.csv", history)
        if stop:
            break
    return TrainResult(best_path, last_path, history, stop)
