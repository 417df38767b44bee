"""Declarative model specs, named presets, and closed-form model facts."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .nn import GCN, LSTMBaseline

FAMILIES = ("GCN", "GCNTF", "LSTM")
TFILM_VARIANTS = ("hidden-cell", "projected")


class SpecError(ValueError):
    """A ModelSpec violates its invariants."""


@dataclass(frozen=True)
class ModelSpec:
    family: str
    blocks: int = 1
    layers: int = 1
    kernel_size: int = 1
    dilation_growth: int = 1
    channels: int = 16
    tfilm_block_size: Optional[int] = None
    hidden_size: Optional[int] = None
    tfilm_variant: str = "hidden-cell"

    def validate(self) -> "ModelSpec":
        if self.family not in FAMILIES:
            raise SpecError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.family == "LSTM":
            if not self.hidden_size or self.hidden_size < 1:
                raise SpecError("LSTM baseline needs hidden_size >= 1")
            return self
        if self.blocks < 1 or self.layers < 1 or self.layers % self.blocks:
            raise SpecError(f"layers ({self.layers}) must be a positive multiple of blocks ({self.blocks})")
        if self.kernel_size < 1 or self.dilation_growth < 1 or self.channels < 1:
            raise SpecError("kernel_size, dilation_growth and channels must be >= 1")
        if self.family == "GCNTF":
            b = self.tfilm_block_size
            if b is None or b < 1 or b & (b - 1):
                raise SpecError(f"tfilm_block_size must be a power of two, got {b}")
            if self.tfilm_variant not in TFILM_VARIANTS:
                raise SpecError(f"tfilm_variant must be one of {TFILM_VARIANTS}")
        return self

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in fields}).validate()


def _gcn(blocks, layers, kernel, growth):
    return ModelSpec("GCN", blocks, layers, kernel, growth, 16)


PRESETS: dict[str, ModelSpec] = {
    "gcn-1": _gcn(1, 10, 3, 2),
    "gcn-3": _gcn(2, 18, 3, 2),
    "gcn-250": _gcn(1, 4, 41, 6),
    "gcn-2500": _gcn(1, 10, 5, 3),
    "lstm-32": ModelSpec("LSTM", hidden_size=32),
    "lstm-96": ModelSpec("LSTM", hidden_size=96),
}
for _name in ("gcn-1", "gcn-3", "gcn-250", "gcn-2500"):
    PRESETS[_name.replace("gcn", "gcntf")] = dataclasses.replace(
        PRESETS[_name], family="GCNTF", tfilm_block_size=128)


def preset(name: str, **overrides) -> ModelSpec:
    try:
        spec = PRESETS[name.lower()]
    except KeyError:
        raise SpecError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return spec.replace(**overrides) if overrides else spec.validate()


Model = Union[GCN, LSTMBaseline]


def assemble(spec: ModelSpec, seed: int = 0) -> Model:
    """Instantiate the network described by ``spec`` with seeded initial weights."""
    spec.validate()
    rng = np.random.default_rng(seed)
    if spec.family == "LSTM":
        model = LSTMBaseline(spec.hidden_size, rng)
    else:
        model = GCN(spec.blocks, spec.layers, spec.kernel_size, spec.dilation_growth,
                    spec.channels,
                    spec.tfilm_block_size if spec.family == "GCNTF" else None,
                    spec.tfilm_variant, rng)
    model.spec = spec
    return model


def receptive_field(spec: ModelSpec) -> int:
    """Number of input samples (including the current one) seen by one output sample."""
    if spec.family == "LSTM":
        raise SpecError("recurrent models have an unbounded receptive field")
    per_block = spec.layers // spec.blocks
    growth = sum(spec.dilation_growth ** i for i in range(per_block))
    return 1 + (spec.kernel_size - 1) * spec.blocks * growth


def tfilm_param_count(channels: int, variant: str = "hidden-cell") -> int:
    C = channels
    count = 4 * C * C + 4 * C * C + 8 * C
    if variant == "projected":
        count += 2 * C * C + 2 * C
    return count


def param_count(spec: ModelSpec) -> int:
    """Closed-form trainable parameter count."""
    spec.validate()
    if spec.family == "LSTM":
        H = spec.hidden_size
        return 4 * H * (1 + H) + 8 * H + H + 1
    C, K, N = spec.channels, spec.kernel_size, spec.layers
    total = 0
    for n in range(N):
        c_in = 1 if n == 0 else C
        total += c_in * 2 * C * K + 2 * C  # gated conv
        total += C * C + C  # 1x1 mix
        if spec.family == "GCNTF":
            total += tfilm_param_count(C, spec.tfilm_variant)
    return total + N * C + 1


def describe(spec: ModelSpec, sample_rate: int = 44100) -> str:
    params = param_count(spec)
    if spec.family == "LSTM":
        return f"params: {params}, receptive_field: unbounded (recurrent)"
    rf = receptive_field(spec)
    return f"params: {params}, receptive_field: {rf} samples ({1000.0 * rf / sample_rate:.1f} ms @{sample_rate})"


def empirical_receptive_field(spec: ModelSpec, margin: int = 256) -> int:
    """Receptive field measured by an impulse probe through the convolutional path.

    Biases are zeroed so the response to silence is exactly zero, and
    weights are made positive so no contribution can cancel; the reach is
    then the index of the last nonzero output sample plus one. TFiLM layers
    are bypassed, since their recurrent controller has unbounded memory.
    """
    from . import tensor as T

    if spec.family == "LSTM":
        raise SpecError("recurrent models have an unbounded receptive field")
    model = assemble(spec, seed=0).to(np.float64)
    for name, p in model.named_parameters():
        p.data[...] = 0.0 if name.endswith("bias") else np.abs(p.data) + 0.1
    for layer in model.layers:
        if layer.tfilm is not None:
            layer.tfilm.force_affine = (1.0, 0.0)
    x = np.zeros((1, receptive_field(spec) + margin))
    x[0, 0] = 1e-3
    with T.no_grad(), T.precision(np.float64):
        y = model(T.Tensor(x, dtype=np.float64)).data[0]
    return int(np.flatnonzero(y).max()) + 1
