"""Central finite-difference verification of autodiff gradients (float64)."""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .tensor import Tensor, precision


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-4,
                   indices: Optional[Iterable[tuple]] = None) -> np.ndarray:
    """Finite-difference gradient of the scalar ``fn()`` w.r.t. entries of ``t``.

    ``t.data`` is perturbed in place and restored. When ``indices`` is given
    only those entries are estimated (others are left at zero).
    """
    grad = np.zeros_like(t.data, dtype=np.float64)
    idx_iter = indices if indices is not None else np.ndindex(*t.shape)
    for idx in idx_iter:
        orig = t.data[idx]
        t.data[idx] = orig + eps
        up = fn().item()
        t.data[idx] = orig - eps
        down = fn().item()
        t.data[idx] = orig
        grad[idx] = (up - down) / (2.0 * eps)
    return grad


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-4,
                    max_entries: Optional[int] = None, seed: int = 0) -> float:
    """Worst relative error between autodiff and finite differences.

    ``inputs`` must be float64 leaves with ``requires_grad=True``. With
    ``max_entries`` a random subset of coordinates per input is compared.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradient checks must run on float64 tensors")
        t.grad = None
    with precision(np.float64):
        loss = fn()
        loss.backward()
        worst = 0.0
        for t in inputs:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            if max_entries is not None and t.size > max_entries:
                flat = rng.choice(t.size, size=max_entries, replace=False)
                idx = [np.unravel_index(i, t.shape) for i in flat]
                numeric = numerical_grad(fn, t, eps, idx)
                sel = tuple(np.array(ix) for ix in zip(*idx))
                err = relative_error(analytic[sel], numeric[sel])
            else:
                numeric = numerical_grad(fn, t, eps)
                err = relative_error(analytic, numeric)
            worst = max(worst, err)
    return worst


def directional_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4,
                      seed: int = 0) -> float:
    """Compare grad . v against a central difference along a random direction v."""
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        for p in params:
            p.grad = None
        loss = fn()
        loss.backward()
        dirs = [rng.standard_normal(p.shape) for p in params]
        analytic = sum(float(np.sum((p.grad if p.grad is not None else 0.0) * v))
                       for p, v in zip(params, dirs))
        saved = [p.data.copy() for p in params]
        for p, v in zip(params, dirs):
            p.data[...] = p.data + eps * v
        up = fn().item()
        for p, s, v in zip(params, saved, dirs):
            p.data[...] = s - eps * v
        down = fn().item()
        for p, s in zip(params, saved):
            p.data[...] = s
    numeric = (up - down) / (2.0 * eps)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-300)
