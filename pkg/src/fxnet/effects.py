"""Reference effects with controllable attack/release ballistics.

Both effects are causal, deterministic functions of a float signal. They
stand in for hardware and plugins when synthesising paired training data.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter

from . import _kernels

SAMPLE_RATE = 44100

FUZZ_GRID = ((50.0, 50.0), (10.0, 250.0), (1.0, 2500.0))
COMPRESSOR_GRID = ((10.0, 50.0), (5.0, 250.0), (1.0, 2500.0))


def time_constant_coeff(ms: float, fs: int = SAMPLE_RATE) -> float:
    """One-pole coefficient reaching 1 - 1/e of a step after ``ms`` milliseconds."""
    if ms <= 0:
        raise ValueError("time constants must be positive")
    return math.exp(-1.0 / (fs * ms / 1000.0))


def envelope_follow(x, attack_ms: float, release_ms: float, fs: int = SAMPLE_RATE,
                    init: float = 0.0) -> np.ndarray:
    """Branching one-pole follower of ``|x|``: attack coefficient while rising, release while falling."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _kernels.envelope(x, time_constant_coeff(attack_ms, fs),
                             time_constant_coeff(release_ms, fs), float(init))


def dc_block(x, cutoff_hz: float = 10.0, fs: int = SAMPLE_RATE) -> np.ndarray:
    """First-order high-pass: y[n] = x[n] - x[n-1] + R y[n-1]."""
    r = math.exp(-2.0 * math.pi * cutoff_hz / fs)
    return lfilter([1.0, -1.0], [1.0, -r], np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class CompressorParams:
    threshold_db: float = -20.0
    ratio: float = 4.0
    attack_ms: float = 10.0
    release_ms: float = 50.0
    makeup_db: float = 0.0
    knee_db: float = 6.0

    kind = "compressor"

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError("ratio must be >= 1")
        if self.knee_db < 0:
            raise ValueError("knee_db must be >= 0")
        if self.attack_ms <= 0 or self.release_ms <= 0:
            raise ValueError("attack_ms and release_ms must be positive")


@dataclass(frozen=True)
class FuzzParams:
    gain: float = 20.0
    bias_depth: float = 1.0
    attack_ms: float = 1.0
    release_ms: float = 2500.0
    volume: float = 0.5

    kind = "fuzz"

    def __post_init__(self):
        if self.gain <= 0 or self.volume <= 0:
            raise ValueError("gain and volume must be positive")
        if not 0.0 <= self.bias_depth <= 1.0:
            raise ValueError("bias_depth must lie in [0, 1]")
        if self.attack_ms <= 0 or self.release_ms <= 0:
            raise ValueError("attack_ms and release_ms must be positive")


EffectParams = Union[CompressorParams, FuzzParams]


def effect_params(kind: str, **values) -> EffectParams:
    kinds = {"compressor": CompressorParams, "fuzz": FuzzParams}
    if kind not in kinds:
        raise ValueError(f"unknown effect {kind!r}; choose from {sorted(kinds)}")
    cls = kinds[kind]
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: v for k, v in values.items() if k in names and v is not None})


def params_to_dict(p: EffectParams) -> dict:
    return {"effect": p.kind, "params": dataclasses.asdict(p)}


def params_from_dict(d: dict) -> EffectParams:
    return effect_params(d["effect"], **d["params"])


def gain_computer(level_db: np.ndarray, threshold_db: float, ratio: float, knee_db: float) -> np.ndarray:
    """Static curve: output level in dB for an input level in dB (quadratic soft knee)."""
    x = np.asarray(level_db, dtype=np.float64)
    over = x - threshold_db
    out = np.where(over <= 0.0, x, threshold_db + over / ratio)
    if knee_db > 0:
        in_knee = np.abs(over) * 2.0 <= knee_db
        knee = x + (1.0 / ratio - 1.0) * (over + knee_db / 2.0) ** 2 / (2.0 * knee_db)
        below = 2.0 * over < -knee_db
        out = np.where(below, x, np.where(in_knee, knee, threshold_db + over / ratio))
    return out


def release_hold_coeff(attack_ms: float, release_ms: float, fs: int = SAMPLE_RATE) -> float:
    """Peak-hold coefficient giving a gain recovery that reaches 1 - 1/e after ``release_ms``.

    Recovery passes through the hold stage and then the attack smoother, so
    the hold pole is solved from the closed-form step response of the two
    poles in cascade, y(t) = a^t + (1 - a) h (a^t - h^t) / (a - h). When the
    release is not slower than the attack no hold is used and recovery
    follows the attack smoother alone.
    """
    a = time_constant_coeff(attack_ms, fs)
    n = fs * release_ms / 1000.0
    goal = math.exp(-1.0)

    def excess(h):
        if abs(a - h) < 1e-12:
            h = a - 1e-12
        return a ** n + (1.0 - a) * h * (a ** n - h ** n) / (a - h) - goal

    if excess(0.0) >= 0.0:
        return 0.0
    return brentq(excess, 0.0, 1.0 - 1e-15, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def compressor_gain(x, p: CompressorParams, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Smoothed linear gain applied by :func:`compress` (before makeup).

    The static curve acts on the instantaneous peak level. The resulting
    gain reduction goes through a peak hold, which keeps it steady across
    the cycles of a periodic signal, and then a one-pole attack smoother.
    """
    x = np.asarray(x, dtype=np.float64)
    level = 20.0 * np.log10(np.maximum(np.abs(x), 1e-10))
    target = 10.0 ** ((gain_computer(level, p.threshold_db, p.ratio, p.knee_db) - level) / 20.0)
    reduction = _kernels.peak_smoother(np.ascontiguousarray(1.0 - target),
                                       time_constant_coeff(p.attack_ms, fs),
                                       release_hold_coeff(p.attack_ms, p.release_ms, fs))
    return 1.0 - reduction


def compress(x, p: CompressorParams, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Feed-forward compressor with instantaneous peak detection and gain ballistics."""
    x = np.asarray(x, dtype=np.float64)
    return x * compressor_gain(x, p, fs) * 10.0 ** (p.makeup_db / 20.0)


def fuzz_bias(x, p: FuzzParams, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Envelope-dependent bias that shifts the fuzz clipping point."""
    return p.bias_depth * envelope_follow(x, p.attack_ms, p.release_ms, fs)


def fuzz(x, p: FuzzParams, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Asymmetric tanh clipper whose bias follows the input envelope."""
    x = np.asarray(x, dtype=np.float64)
    bias = fuzz_bias(x, p, fs)
    shaped = np.tanh(p.gain * x + bias) - np.tanh(bias)
    return p.volume * dc_block(shaped, fs=fs)


def apply_effect(x, p: EffectParams, fs: int = SAMPLE_RATE) -> np.ndarray:
    if isinstance(p, CompressorParams):
        return compress(x, p, fs)
    return fuzz(x, p, fs)


def time_to_fraction(trajectory: np.ndarray, start: int, fraction: float = 1.0 - math.exp(-1.0)) -> float:
    """Samples after ``start`` until ``trajectory`` covers ``fraction`` of its total move.

    Linear interpolation between samples; the move is measured from
    ``trajectory[start - 1]`` to the final value.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    v0 = traj[start - 1]
    v1 = traj[-1]
    goal = v0 + fraction * (v1 - v0)
    seg = (traj[start:] - goal) * np.sign(v1 - v0)
    hit = int(np.argmax(seg >= 0))
    prev = traj[start + hit - 1] if hit > 0 else v0
    cur = traj[start + hit]
    frac = 0.0 if cur == prev else (goal - prev) / (cur - prev)
    return hit + frac
