"""Network layers: gated dilated convolutions, TFiLM, recurrent baselines."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Minimal container that discovers parameters and submodules by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 1,
                 dilation: int = 1, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        fan_in = in_channels * kernel_size
        self.dilation = dilation
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter(_uniform(rng, (out_channels,), fan_in))

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d_causal(x, self.weight, self.bias, self.dilation)


class Linear(Module):
    """y = x W^T + b over the last axis of a (rows, in) tensor."""

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.weight = Parameter(_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter(_uniform(rng, (1, out_features), in_features))

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, T.transpose(self.weight)) + self.bias


class LSTMCell(Module):
    """Weights for a single-layer LSTM with separate input/hidden biases."""

    def __init__(self, input_size: int, hidden_size: int, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        H = hidden_size
        self.hidden_size = H
        self.w_ih = Parameter(_uniform(rng, (4 * H, input_size), H))
        self.w_hh = Parameter(_uniform(rng, (4 * H, H), H))
        b_ih = _uniform(rng, (4 * H,), H)
        b_ih[H:2 * H] = 1.0
        b_hh = _uniform(rng, (4 * H,), H)
        b_hh[H:2 * H] = 0.0
        self.b_ih = Parameter(b_ih)
        self.b_hh = Parameter(b_hh)

    def forward(self, x: Tensor, h0=None, c0=None) -> Tensor:
        """x: (T, input_size) -> (2, T, H) stacked hidden/cell trajectories."""
        return T.lstm_sequence(x, self.w_ih, self.w_hh, self.b_ih, self.b_hh, h0, c0)


class TFiLM(Module):
    """Block-wise affine modulation driven by a recurrent controller.

    The sequence is cut into blocks of ``block_size`` samples. Each completed
    block is max-pooled over time and fed to the controller; the modulation
    applied to block ``t`` comes from the controller state after blocks
    ``0..t-1`` (block 0 uses the zero initial state). This keeps the layer
    causal at block granularity, so offline and streaming runs agree.

    ``variant="hidden-cell"`` uses the hidden state as scale and the cell
    state as shift; ``variant="projected"`` maps the hidden state through a
    linear layer to (scale, shift).
    """

    def __init__(self, channels: int, block_size: int, variant: str = "hidden-cell",
                 rng: Optional[np.random.Generator] = None):
        if variant not in ("hidden-cell", "projected"):
            raise ValueError(f"unknown TFiLM variant {variant!r}")
        rng = rng or np.random.default_rng()
        self.channels = channels
        self.block_size = block_size
        self.variant = variant
        self.controller = LSTMCell(channels, channels, rng)
        if variant == "projected":
            self.proj = Linear(channels, 2 * channels, rng)
        self.force_affine: Optional[tuple[float, float]] = None

    def affine_params(self, h: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Scale/shift from controller states (graph-free, used when streaming)."""
        if self.force_affine is not None:
            g, b = self.force_affine
            return np.full_like(h, g), np.full_like(h, b)
        if self.variant == "hidden-cell":
            return h, c
        p = h @ self.proj.weight.data.T + self.proj.bias.data[0]
        return p[..., :self.channels], p[..., self.channels:]

    def forward(self, z: Tensor) -> Tensor:
        C, L = z.shape
        B = self.block_size
        if self.force_affine is not None:
            g, b = self.force_affine
            return z * g + b
        n_full = L // B
        n_blocks = -(-L // B)
        zeros = T.Tensor(np.zeros((1, C), dtype=z.dtype), dtype=z.dtype)
        if n_full > 0:
            pooled = T.maxpool1d(z[:, :n_full * B], B)
            seq = self.controller(T.transpose(pooled))
            h_all = T.concat([zeros, seq[0]], axis=0)[:n_blocks]
            c_all = T.concat([zeros, seq[1]], axis=0)[:n_blocks]
        else:
            h_all, c_all = zeros, zeros
        if self.variant == "hidden-cell":
            gamma, beta = h_all, c_all
        else:
            p = self.proj(h_all)
            gamma, beta = p[:, :C], p[:, C:]
        return T.block_affine(z, T.transpose(gamma), T.transpose(beta), B)


class GatedConvLayer(Module):
    """Dilated causal conv -> tanh/sigmoid gate -> [TFiLM] -> 1x1 mix (+ residual)."""

    def __init__(self, in_channels: int, channels: int, kernel_size: int, dilation: int,
                 tfilm: Optional[TFiLM] = None, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.in_channels = in_channels
        self.channels = channels
        self.conv = Conv1d(in_channels, 2 * channels, kernel_size, dilation, rng)
        self.mix = Conv1d(channels, channels, 1, 1, rng)
        self.tfilm = tfilm

    @property
    def dilation(self) -> int:
        return self.conv.dilation

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        z = T.gated_activation(self.conv(x))
        if self.tfilm is not None:
            z = self.tfilm(z)
        skip = self.mix(z)
        residual = skip + x if self.in_channels == self.channels else skip
        return residual, skip


class GCN(Module):
    """Stack of gated conv layers whose skip outputs are mixed to one channel."""

    def __init__(self, blocks: int, layers: int, kernel_size: int, dilation_growth: int,
                 channels: int, tfilm_block_size: Optional[int] = None,
                 tfilm_variant: str = "hidden-cell", rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        per_block = layers // blocks
        self.layers = []
        for n in range(layers):
            dilation = dilation_growth ** (n % per_block)
            tfilm = None
            if tfilm_block_size is not None:
                tfilm = TFiLM(channels, tfilm_block_size, tfilm_variant, rng)
            self.layers.append(GatedConvLayer(1 if n == 0 else channels, channels, kernel_size,
                                              dilation, tfilm, rng))
        self.output = Conv1d(layers * channels, 1, 1, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        """x: (1, L) -> (1, L)."""
        skips = []
        for layer in self.layers:
            x, skip = layer(x)
            skips.append(skip)
        return self.output(T.concat(skips, axis=0))


class LSTMBaseline(Module):
    """Single recurrent layer with a linear readout added to the input."""

    def __init__(self, hidden_size: int, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.hidden_size = hidden_size
        self.lstm = LSTMCell(1, hidden_size, rng)
        self.readout = Linear(hidden_size, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        seq = self.lstm(T.transpose(x))
        out = self.readout(seq[0])
        return T.transpose(out) + x
