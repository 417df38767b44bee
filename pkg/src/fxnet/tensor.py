"""Dense tensors with reverse-mode automatic differentiation.

Graphs are built dynamically on every forward call. Each differentiable
primitive records its parents and a closure mapping the output gradient to
input gradients; :func:`backward` walks the recorded graph in reverse
topological order.

Training runs in float32. ``with precision(np.float64):`` switches the
default dtype for newly created tensors, which is what the gradient checks
use.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels

EPS = 1e-8

_state = {"dtype": np.float32, "grad": True}


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference only)."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def default_dtype():
    return _state["dtype"]


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents, backward):
        self.parents = parents
        self.backward = backward


class Tensor:
    """n-dimensional array that may participate in an autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "_retain", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = dtype or _state["dtype"]
        arr = np.asarray(data, dtype=dtype)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[_Node] = None
        self._retain = False

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def retain_grad(self) -> "Tensor":
        """Keep ``grad`` on this non-leaf tensor after backward."""
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, retain_graph: bool = True) -> None:
        backward(self, retain_graph=retain_graph)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._retain = False
    req = _state["grad"] and any(p.requires_grad for p in parents)
    out.requires_grad = req
    out._node = _Node(tuple(parents), backward) if req else None
    return out


# ---------------------------------------------------------------------------
# graph traversal


def backward(loss: Tensor, retain_graph: bool = True) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf.

    Repeated calls add to existing gradients. With ``retain_graph=False`` the
    saved forward values are released as the traversal proceeds.
    """
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t._node
        if node is None or t._retain:
            t.grad = g.copy() if t.grad is None else t.grad + g
        if node is None:
            continue
        parent_grads = node.backward(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        if not retain_graph:
            t._node = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim == b.ndim and all(x == y or x == 1 or y == 1 for x, y in zip(a.shape, b.shape)):
        return
    raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    _check_broadcast(a.data, b.data)
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is stable for large |x| and faster than exp in numpy
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = out.astype(x.dtype, copy=False)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _result(out, (x,), bw)


def tabs(x: Tensor) -> Tensor:
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def log(x: Tensor, eps: float = EPS) -> Tensor:
    """Natural log with inputs floored at ``eps`` (zero gradient below it)."""
    floored = np.maximum(x.data, eps)

    def bw(g):
        return (np.where(x.data > eps, g / floored, 0.0).astype(x.dtype),)

    return _result(np.log(floored), (x,), bw)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def gated_activation(h: Tensor) -> Tensor:
    """tanh(filter) * sigmoid(gate) for a (2C, L) input split along channels."""
    if h.ndim != 2 or h.shape[0] % 2:
        raise ShapeError(f"gated_activation expects (2C, L), got {h.shape}")
    C = h.shape[0] // 2
    t = np.tanh(h.data[:C])
    s = 0.5 * (1.0 + np.tanh(0.5 * h.data[C:]))
    out = t * s

    def bw(g):
        gh = np.empty_like(h.data)
        gs = g * t
        np.multiply(g * s, 1.0 - t * t, out=gh[:C])
        np.multiply(gs * s, 1.0 - s, out=gh[C:])
        return (gh,)

    return _result(out, (h,), bw)


def block_affine(z: Tensor, gamma: Tensor, beta: Tensor, block_size: int) -> Tensor:
    """y[c, t] = gamma[c, t // B] * z[c, t] + beta[c, t // B].

    ``gamma`` and ``beta`` have shape (C, ceil(L / B)); the last block may be
    partial.
    """
    C, L = z.shape
    B = block_size
    n_blocks = -(-L // B)
    if gamma.shape != (C, n_blocks) or beta.shape != (C, n_blocks):
        raise ShapeError(f"modulation shape {gamma.shape}/{beta.shape} != {(C, n_blocks)}")
    n_full = L // B
    tail = L - n_full * B
    out = np.empty_like(z.data)
    head = z.data[:, :n_full * B].reshape(C, n_full, B)
    out[:, :n_full * B] = (gamma.data[:, :n_full, None] * head
                           + beta.data[:, :n_full, None]).reshape(C, n_full * B)
    if tail:
        out[:, n_full * B:] = gamma.data[:, -1:] * z.data[:, n_full * B:] + beta.data[:, -1:]

    def _block_sum(v):
        res = np.empty((C, n_blocks), dtype=v.dtype)
        res[:, :n_full] = v[:, :n_full * B].reshape(C, n_full, B).sum(axis=2)
        if tail:
            res[:, -1] = v[:, n_full * B:].sum(axis=1)
        return res

    def bw(g):
        gz = np.empty_like(g)
        gz[:, :n_full * B] = (g[:, :n_full * B].reshape(C, n_full, B)
                              * gamma.data[:, :n_full, None]).reshape(C, n_full * B)
        if tail:
            gz[:, n_full * B:] = g[:, n_full * B:] * gamma.data[:, -1:]
        return gz, _block_sum(g * z.data), _block_sum(g)

    return _result(out, (z, gamma, beta), bw)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(x: Tensor, axis=None) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis), dtype=x.dtype)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result(out, (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return tsum(x, axis) * (1.0 / n)


def norm(x: Tensor) -> Tensor:
    """Frobenius norm; gradient is taken as zero at the origin."""
    n = np.sqrt(np.sum(x.data.astype(np.float64) ** 2))
    out = np.asarray(n, dtype=x.dtype)

    def bw(g):
        if n == 0.0:
            return (np.zeros_like(x.data),)
        return ((g / n) * x.data,)

    return _result(out, (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _result(np.ascontiguousarray(x.data.T), (x,), lambda g: (np.ascontiguousarray(g.T),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _result(np.ascontiguousarray(out), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(out, tensors, bw)


def pad_right(x: Tensor, n: int) -> Tensor:
    """Append ``n`` zeros along the last axis."""
    if n == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 1) + [(0, n)]
    out = np.pad(x.data, widths)
    length = x.shape[-1]
    return _result(out, (x,), lambda g: (np.ascontiguousarray(g[..., :length]),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv_forward_padded(xp: np.ndarray, w: np.ndarray, bias, dilation: int) -> np.ndarray:
    """Valid dilated convolution over an already left-padded input.

    Shared by the graph op and the streaming engine so both accumulate taps
    in the same order.
    """
    K = w.shape[2]
    L = xp.shape[1] - (K - 1) * dilation
    taps = np.ascontiguousarray(np.moveaxis(w, 2, 0))
    out = taps[K - 1] @ xp[:, (K - 1) * dilation:]
    for k in range(K - 1):
        out += taps[k] @ xp[:, k * dilation:k * dilation + L]
    if bias is not None:
        out += bias[:, None]
    return out


def conv1d_causal(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, dilation: int = 1) -> Tensor:
    """Causal dilated 1-D convolution, (C_in, L) -> (C_out, L).

    The input is left-padded with ``(K - 1) * dilation`` zeros, so output
    sample ``t`` only sees inputs at ``t, t - d, ..., t - (K - 1) d``.
    """
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError(f"conv1d_causal expects x (C, L) and w (Co, Ci, K); got {x.shape}, {w.shape}")
    co, ci, K = w.shape
    if x.shape[0] != ci:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"bias shape {bias.shape} != ({co},)")
    pad = (K - 1) * dilation
    L = x.shape[1]
    xp = np.concatenate([np.zeros((ci, pad), dtype=x.dtype), x.data], axis=1) if pad else x.data
    out = conv_forward_padded(xp, w.data, None if bias is None else bias.data, dilation)
    parents = (x, w) if bias is None else (x, w, bias)

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            taps_t = np.ascontiguousarray(np.transpose(w.data, (2, 1, 0)))
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k * dilation:k * dilation + L] += taps_t[k] @ g
            gx = np.ascontiguousarray(gxp[:, pad:])
        if w.requires_grad:
            gw = np.empty((K,) + w.shape[:2], dtype=w.dtype)
            for k in range(K):
                gw[k] = g @ xp[:, k * dilation:k * dilation + L].T
            gw = np.ascontiguousarray(np.moveaxis(gw, 0, 2))
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=1) if bias.requires_grad else None,)
        return grads

    return _result(out, parents, bw)


def maxpool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping max pooling along time, (C, L) -> (C, L / pool).

    Gradient goes to the first maximal sample of each window.
    """
    if x.ndim != 2:
        raise ShapeError("maxpool1d expects (C, L)")
    C, L = x.shape
    if pool < 1 or L % pool:
        raise ShapeError(f"length {L} is not divisible by pool size {pool}")
    T = L // pool
    blocks = x.data.reshape(C, T, pool)
    idx = np.argmax(blocks, axis=2)
    out = np.take_along_axis(blocks, idx[..., None], axis=2)[..., 0]

    def bw(g):
        gin = np.zeros_like(blocks)
        np.put_along_axis(gin, idx[..., None], g[..., None], axis=2)
        return (gin.reshape(C, L),)

    return _result(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------------------
# spectral


def hann_window(length: int, dtype=np.float64) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(length)
    return (0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)).astype(dtype)


def _frame_window(fft_size: int, win_length: int, dtype) -> np.ndarray:
    win = np.zeros(fft_size, dtype=dtype)
    left = (fft_size - win_length) // 2
    win[left:left + win_length] = hann_window(win_length, dtype)
    return win


def stft(x: Tensor, fft_size: int, hop: int, win_length: Optional[int] = None) -> Tensor:
    """Windowed real DFT of every full frame.

    Returns a tensor of shape (2, frames, fft_size // 2 + 1) holding the real
    and imaginary parts. No centering: frame ``f`` covers samples
    ``[f * hop, f * hop + fft_size)``.
    """
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    win_length = win_length or fft_size
    if win_length > fft_size:
        raise ValueError("win_length must not exceed fft_size")
    if x.ndim != 1:
        raise ShapeError("stft expects a 1-D signal")
    L = x.shape[0]
    if L < fft_size:
        raise ShapeError(f"signal of {L} samples is shorter than one frame ({fft_size})")
    n_frames = 1 + (L - fft_size) // hop
    win = _frame_window(fft_size, win_length, x.dtype)
    frames = np.lib.stride_tricks.sliding_window_view(x.data, fft_size)[::hop][:n_frames]
    spec = np.fft.rfft(frames * win, axis=1)
    out = np.stack([spec.real, spec.imag]).astype(x.dtype)

    def bw(g):
        z = (g[0] + 1j * g[1]).astype(np.complex128)
        z[:, 1:fft_size // 2] *= 0.5
        dframes = (np.fft.irfft(z, n=fft_size, axis=1) * fft_size * win).astype(x.dtype)
        gx = np.zeros(L, dtype=x.dtype)
        if fft_size % hop == 0:
            r = fft_size // hop
            for j in range(r):
                seg = dframes[:, j * hop:(j + 1) * hop].reshape(-1)
                gx[j * hop:j * hop + seg.size] += seg
        else:
            for f in range(n_frames):
                gx[f * hop:f * hop + fft_size] += dframes[f]
        return (gx,)

    return _result(out, (x,), bw)


def complex_abs(spec: Tensor) -> Tensor:
    """Magnitude of a (2, ...) real/imag tensor; backward divides by max(|X|, 1e-8)."""
    re, im = spec.data[0], spec.data[1]
    mag = np.sqrt(re * re + im * im)
    safe = np.maximum(mag, EPS)

    def bw(g):
        return (np.stack([g * re / safe, g * im / safe]),)

    return _result(mag, (spec,), bw)


def stft_magnitude(x: Tensor, fft_size: int, hop: int, win_length: Optional[int] = None) -> Tensor:
    return complex_abs(stft(x, fft_size, hop, win_length))


# ---------------------------------------------------------------------------
# recurrence


def lstm_sequence(x: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor,
                  h0: Optional[np.ndarray] = None, c0: Optional[np.ndarray] = None) -> Tensor:
    """Single-layer LSTM over a (T, I) sequence.

    Returns a (2, T, H) tensor stacking hidden and cell trajectories. The
    initial state is treated as a constant.
    """
    if x.ndim != 2 or w_ih.shape[1] != x.shape[1]:
        raise ShapeError(f"lstm input {x.shape} does not match w_ih {w_ih.shape}")
    H = w_hh.shape[1]
    dt = x.dtype
    h0 = np.zeros(H, dtype=dt) if h0 is None else np.asarray(h0, dtype=dt)
    c0 = np.zeros(H, dtype=dt) if c0 is None else np.asarray(c0, dtype=dt)
    xg = x.data @ w_ih.data.T + (b_ih.data + b_hh.data)
    hs, cs, acts = _kernels.lstm_forward(np.ascontiguousarray(xg, dtype=dt), w_hh.data, h0, c0)
    out = np.stack([hs, cs])

    def bw(g):
        dpre = _kernels.lstm_backward(np.ascontiguousarray(g[0]), np.ascontiguousarray(g[1]),
                                      acts, cs, c0, w_hh.data)
        h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
        db = dpre.sum(axis=0)
        return (
            dpre @ w_ih.data if x.requires_grad else None,
            dpre.T @ x.data,
            dpre.T @ h_prev,
            db,
            db.copy(),
        )

    return _result(out, (x, w_ih, w_hh, b_ih, b_hh), bw)
