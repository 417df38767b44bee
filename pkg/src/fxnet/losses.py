"""Time-domain and multi-resolution spectral training losses."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .tensor import ShapeError, Tensor

DEFAULT_RESOLUTIONS = ((512, 128, 512), (1024, 256, 1024), (2048, 512, 2048))


@dataclass
class LossConfig:
    alpha: float = 1.0
    stft_resolutions: tuple = field(default_factory=lambda: DEFAULT_RESOLUTIONS)

    def __post_init__(self):
        self.stft_resolutions = tuple(tuple(int(v) for v in r) for r in self.stft_resolutions)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        for fft_size, hop, win in self.stft_resolutions:
            if win > fft_size or hop < 1:
                raise ValueError(f"invalid STFT resolution {(fft_size, hop, win)}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "stft_resolutions": [list(r) for r in self.stft_resolutions]}

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(alpha=d.get("alpha", 1.0),
                   stft_resolutions=d.get("stft_resolutions", DEFAULT_RESOLUTIONS))


def _flat(x: Tensor) -> Tensor:
    return x if x.ndim == 1 else x.reshape(-1)


def _check(pred: Tensor, target: Tensor) -> None:
    if pred.size != target.size:
        raise ShapeError(f"prediction has {pred.size} samples, target {target.size}")


def mae(pred: Tensor, target: Tensor) -> Tensor:
    _check(pred, target)
    return T.mean(T.tabs(_flat(pred) - _flat(target)))


def stft_distance(pred: Tensor, target: Tensor, fft_size: int, hop: int, win_length: int) -> Tensor:
    """Spectral convergence plus mean absolute log-magnitude difference."""
    p = T.stft_magnitude(_flat(pred), fft_size, hop, win_length)
    t = T.stft_magnitude(_flat(target), fft_size, hop, win_length)
    t_norm = T.norm(t)
    sc = T.norm(t - p) / (t_norm if t_norm.item() > 0.0 else T.EPS)
    log_mag = T.mean(T.tabs(T.log(t) - T.log(p)))
    return sc + log_mag


def mr_stft(pred: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """Mean over resolutions of :func:`stft_distance`."""
    cfg = cfg or LossConfig()
    _check(pred, target)
    longest = max(r[0] for r in cfg.stft_resolutions)
    if pred.size < longest:
        raise ShapeError(f"signal of {pred.size} samples is shorter than the largest frame ({longest})")
    terms = [stft_distance(pred, target, *r) for r in cfg.stft_resolutions]
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * (1.0 / len(terms))


def composite_loss(pred: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """MAE + alpha * MR-STFT."""
    cfg = cfg or LossConfig()
    loss = mae(pred, target)
    if cfg.alpha:
        loss = loss + cfg.alpha * mr_stft(pred, target, cfg)
    return loss
