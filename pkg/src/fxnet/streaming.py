"""Chunked causal inference that reproduces whole-signal processing.

Each convolution keeps the last ``(K - 1) * dilation`` input samples; each
TFiLM layer keeps its controller state, the running max of the block in
progress and the modulation currently in effect. The controller advances
only when a block completes, so any chunking gives the same output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .nn import GCN, TFiLM, LSTMBaseline
from .tensor import conv_forward_padded


@dataclass
class TFiLMState:
    h: np.ndarray
    c: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    running_max: np.ndarray
    samples_into_block: int = 0
    steps: int = 0


class History:
    """Per-channel input history with amortised O(1) appends.

    The last ``size`` samples are always available as a contiguous column
    range; the backing array is compacted only when it fills up.
    """

    def __init__(self, channels: int, size: int, dtype):
        self.size = size
        self.buf = np.zeros((channels, 2 * size + 1), dtype=dtype)
        self.end = size

    def extend(self, x: np.ndarray) -> np.ndarray:
        """Append ``x`` and return ``[history | x]`` as one array of ``size + n`` columns."""
        n = x.shape[1]
        if self.end + n > self.buf.shape[1]:
            keep = self.buf[:, self.end - self.size:self.end]
            if n + self.size > self.buf.shape[1]:
                self.buf = np.zeros((self.buf.shape[0], 2 * (self.size + n)), dtype=self.buf.dtype)
            self.buf[:, :self.size] = keep
            self.end = self.size
        self.buf[:, self.end:self.end + n] = x
        self.end += n
        return self.buf[:, self.end - self.size - n:self.end]

    @property
    def context(self) -> np.ndarray:
        return self.buf[:, self.end - self.size:self.end]

    @property
    def nbytes(self) -> int:
        return self.buf.nbytes


@dataclass
class LayerState:
    history: History
    tfilm: Optional[TFiLMState] = None

    @property
    def context(self) -> np.ndarray:
        return self.history.context


@dataclass
class StreamState:
    layers: list = field(default_factory=list)
    h: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    samples_seen: int = 0

    @property
    def context_samples(self) -> int:
        """Total buffered history per channel, summed over convolution layers."""
        return sum(ls.context.shape[1] for ls in self.layers)

    def nbytes(self) -> int:
        total = 0
        for ls in self.layers:
            total += ls.history.nbytes
            if ls.tfilm is not None:
                t = ls.tfilm
                total += t.h.nbytes + t.c.nbytes + t.gamma.nbytes + t.beta.nbytes + t.running_max.nbytes
        for v in (self.h, self.c):
            if v is not None:
                total += v.nbytes
        return total


def _tfilm_init(tfilm: TFiLM, dtype) -> TFiLMState:
    C = tfilm.channels
    h = np.zeros(C, dtype=dtype)
    c = np.zeros(C, dtype=dtype)
    gamma, beta = tfilm.affine_params(h[None], c[None])
    return TFiLMState(h, c, gamma[0].astype(dtype), beta[0].astype(dtype),
                      np.full(C, -np.inf, dtype=dtype))


def stream_init(model) -> StreamState:
    """Zero state, equivalent to the zero left-padding of offline processing."""
    if isinstance(model, LSTMBaseline):
        dt = model.lstm.w_hh.dtype
        H = model.hidden_size
        return StreamState(h=np.zeros(H, dtype=dt), c=np.zeros(H, dtype=dt))
    layers = []
    for layer in model.layers:
        w = layer.conv.weight.data
        ctx = (w.shape[2] - 1) * layer.dilation
        tf = _tfilm_init(layer.tfilm, w.dtype) if layer.tfilm is not None else None
        layers.append(LayerState(History(w.shape[1], ctx, w.dtype), tf))
    return StreamState(layers=layers)


def _tfilm_step(tfilm: TFiLM, st: TFiLMState, z: np.ndarray) -> np.ndarray:
    B = tfilm.block_size
    ctrl = tfilm.controller
    out = np.empty_like(z)
    n = z.shape[1]
    pos = 0
    while pos < n:
        take = min(n - pos, B - st.samples_into_block)
        seg = z[:, pos:pos + take]
        out[:, pos:pos + take] = st.gamma[:, None] * seg + st.beta[:, None]
        np.maximum(st.running_max, seg.max(axis=1), out=st.running_max)
        st.samples_into_block += take
        pos += take
        if st.samples_into_block == B:
            xg = st.running_max[None] @ ctrl.w_ih.data.T + (ctrl.b_ih.data + ctrl.b_hh.data)
            hs, cs, _ = _kernels.lstm_forward(np.ascontiguousarray(xg, dtype=z.dtype),
                                              ctrl.w_hh.data, st.h, st.c)
            st.h, st.c = hs[0], cs[0]
            gamma, beta = tfilm.affine_params(hs, cs)
            st.gamma, st.beta = gamma[0].astype(z.dtype), beta[0].astype(z.dtype)
            st.running_max.fill(-np.inf)
            st.samples_into_block = 0
            st.steps += 1
    return out


def _gcn_step(model: GCN, state: StreamState, x: np.ndarray) -> np.ndarray:
    skips = []
    for layer, ls in zip(model.layers, state.layers):
        conv = layer.conv
        xp = ls.history.extend(x) if ls.history.size else x
        h = conv_forward_padded(xp, conv.weight.data, conv.bias.data, conv.dilation)
        C = layer.channels
        z = np.tanh(h[:C]) * (0.5 * (1.0 + np.tanh(0.5 * h[C:])))
        if layer.tfilm is not None:
            z = _tfilm_step(layer.tfilm, ls.tfilm, z) if layer.tfilm.force_affine is None \
                else z * layer.tfilm.force_affine[0] + layer.tfilm.force_affine[1]
        skip = conv_forward_padded(z, layer.mix.weight.data, layer.mix.bias.data, 1)
        x = skip + x if layer.in_channels == C else skip
        skips.append(skip)
    out = model.output
    return conv_forward_padded(np.concatenate(skips, axis=0), out.weight.data, out.bias.data, 1)


def _lstm_step(model: LSTMBaseline, state: StreamState, x: np.ndarray) -> np.ndarray:
    cell = model.lstm
    xg = x.T @ cell.w_ih.data.T + (cell.b_ih.data + cell.b_hh.data)
    hs, cs, _ = _kernels.lstm_forward(np.ascontiguousarray(xg, dtype=x.dtype), cell.w_hh.data,
                                      state.h, state.c)
    state.h, state.c = hs[-1].copy(), cs[-1].copy()
    out = hs @ model.readout.weight.data.T + model.readout.bias.data
    return out.T + x


def stream_process(model, state: StreamState, chunk) -> tuple[np.ndarray, StreamState]:
    """Process one chunk of any length >= 1; returns the same number of samples."""
    x = np.asarray(chunk, dtype=np.float32).reshape(1, -1)
    if x.shape[1] == 0:
        raise ValueError("chunk must contain at least one sample")
    x = x.astype(model.parameters()[0].dtype, copy=False)
    if isinstance(model, LSTMBaseline):
        y = _lstm_step(model, state, x)
    else:
        y = _gcn_step(model, state, x)
    state.samples_seen += x.shape[1]
    return y[0], state


def process_stream(model, signal, chunk_size: int) -> np.ndarray:
    """Run ``signal`` through the streaming engine in fixed-size chunks."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    signal = np.asarray(signal, dtype=np.float32).reshape(-1)
    state = stream_init(model)
    out = np.empty_like(signal)
    for start in range(0, len(signal), chunk_size):
        y, state = stream_process(model, state, signal[start:start + chunk_size])
        out[start:start + len(y)] = y
    return out
