"""Source signals, paired corpus synthesis and dataset manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import SAMPLE_RATE, AudioBuffer, read_wav, write_wav
from .effects import EffectParams, apply_effect, params_from_dict, params_to_dict

SOURCES = ("pluck-synth", "noise-burst", "external-wav")
SPLITS = ("train", "val", "test")


@dataclass
class SignalPlan:
    duration_s: float
    sample_rate: int = SAMPLE_RATE
    amplitude_segment_s: float = 5.0
    amplitude_range: tuple = (-30.0, 0.0)
    source: str = "pluck-synth"
    source_path: Optional[str] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        if self.source == "external-wav" and not self.source_path:
            raise ValueError("external-wav source needs source_path")
        lo, hi = self.amplitude_range
        if lo > hi:
            raise ValueError("amplitude_range must be (min_db, max_db)")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    def to_dict(self) -> dict:
        return {"duration_s": self.duration_s, "sample_rate": self.sample_rate,
                "amplitude_segment_s": self.amplitude_segment_s,
                "amplitude_range": list(self.amplitude_range), "source": self.source,
                "source_path": self.source_path}


def karplus_strong(freq: float, n: int, decay: float, rng: np.random.Generator,
                   fs: int = SAMPLE_RATE) -> np.ndarray:
    """Plucked-string tone: a noise burst recirculated through an averaging delay line."""
    period = max(2, int(round(fs / freq)))
    buf = np.zeros(n + 1)
    first = min(period, n)
    buf[1:first + 1] = rng.uniform(-1.0, 1.0, first)
    y = buf[1:]
    for start in range(period, n, period):
        stop = min(start + period, n)
        width = stop - start
        # y[t] = decay * (y[t - P] + y[t - P - 1]) / 2, with y[-1] = 0 via the buffer prefix
        y[start:stop] = decay * 0.5 * (buf[start - period + 1:start - period + 1 + width]
                                       + buf[start - period:start - period + width])
    return y.copy()


def pluck_synth(n: int, rng: np.random.Generator, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Sequence of overlapping plucked notes at random guitar-range pitches."""
    out = np.zeros(n)
    t = 0
    while t < n:
        midi = rng.integers(40, 77)
        freq = 440.0 * 2.0 ** ((midi - 69) / 12.0)
        t60 = rng.uniform(0.5, 3.0)
        length = min(int(t60 * fs), n - t)
        periods_per_t60 = t60 * freq
        decay = 10.0 ** (-3.0 / periods_per_t60)
        velocity = rng.uniform(0.3, 1.0)
        out[t:t + length] += velocity * karplus_strong(freq, length, decay, rng, fs)
        t += int(rng.uniform(0.15, 1.0) * fs)
    return out


def noise_bursts(n: int, rng: np.random.Generator, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Exponentially decaying white-noise bursts."""
    out = np.zeros(n)
    t = 0
    while t < n:
        length = min(int(rng.uniform(0.2, 1.5) * fs), n - t)
        tau = rng.uniform(0.05, 0.5) * fs
        out[t:t + length] += rng.uniform(0.3, 1.0) * rng.standard_normal(length) * np.exp(-np.arange(length) / tau)
        t += int(rng.uniform(0.2, 1.2) * fs)
    return out


def segment_gains(n: int, plan: SignalPlan, rng: np.random.Generator) -> np.ndarray:
    """Per-sample gain redrawn uniformly in dB every ``amplitude_segment_s`` seconds."""
    seg = int(round(plan.amplitude_segment_s * plan.sample_rate))
    count = -(-n // seg)
    lo, hi = plan.amplitude_range
    gains_db = rng.uniform(lo, hi, count)
    return np.repeat(10.0 ** (gains_db / 20.0), seg)[:n]


def render_source(plan: SignalPlan, rng: np.random.Generator) -> np.ndarray:
    """Clean input signal with the amplitude re-drawn every segment, peak <= 0.9."""
    n = plan.num_samples
    if plan.source == "pluck-synth":
        x = pluck_synth(n, rng, plan.sample_rate)
    elif plan.source == "noise-burst":
        x = noise_bursts(n, rng, plan.sample_rate)
    else:
        buf = read_wav(plan.source_path).require_rate(plan.sample_rate)
        if len(buf) < n:
            reps = -(-n // max(len(buf), 1))
            x = np.tile(buf.samples.astype(np.float64), reps)[:n]
        else:
            x = buf.samples[:n].astype(np.float64)
    peak = np.max(np.abs(x)) if n else 0.0
    if peak > 0:
        x = x * (0.9 / peak)
    return x * segment_gains(n, plan, rng)


@dataclass
class ManifestEntry:
    input_path: str
    target_path: str
    split: str
    duration_s: float


@dataclass
class DatasetManifest:
    sample_rate: int
    effect: Optional[str]
    params: Optional[dict]
    entries: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    root: Optional[Path] = None

    def to_dict(self) -> dict:
        d = {"sample_rate": self.sample_rate, "effect": self.effect, "params": self.params,
             "entries": [vars(e) for e in self.entries]}
        d.update(self.extra)
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        self.root = path.parent
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        d = json.loads(path.read_text())
        known = {"sample_rate", "effect", "params", "entries"}
        entries = [ManifestEntry(**e) for e in d["entries"]]
        return cls(d["sample_rate"], d.get("effect"), d.get("params"), entries,
                   {k: v for k, v in d.items() if k not in known}, path.parent)

    def effect_params(self) -> Optional[EffectParams]:
        if self.effect is None:
            return None
        return params_from_dict({"effect": self.effect, "params": self.params})

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() or self.root is None else self.root / p

    def split(self, name: str) -> list[tuple[np.ndarray, np.ndarray]]:
        """Load (input, target) sample arrays for one split."""
        pairs = []
        for e in self.entries:
            if e.split != name:
                continue
            x = read_wav(self.resolve(e.input_path)).require_rate(self.sample_rate)
            y = read_wav(self.resolve(e.target_path)).require_rate(self.sample_rate)
            if len(x) != len(y):
                raise ValueError(f"{e.input_path} and {e.target_path} differ in length")
            pairs.append((x.samples, y.samples))
        return pairs


def split_bounds(n: int) -> dict[str, tuple[int, int]]:
    """Time split 2:1:1 into train/val/test."""
    a, b = n // 2, (3 * n) // 4
    return {"train": (0, a), "val": (a, b), "test": (b, n)}


def _write_pairs(x: np.ndarray, y: np.ndarray, out_dir: Path, rate: int) -> list[ManifestEntry]:
    entries = []
    for name, (lo, hi) in split_bounds(len(x)).items():
        inp, tgt = f"{name}_input.wav", f"{name}_target.wav"
        write_wav(AudioBuffer(x[lo:hi], rate), out_dir / inp)
        write_wav(AudioBuffer(y[lo:hi], rate), out_dir / tgt)
        entries.append(ManifestEntry(inp, tgt, name, (hi - lo) / rate))
    return entries


def synthesize_corpus(plan: SignalPlan, params: EffectParams, seed: int, out_dir) -> DatasetManifest:
    """Render a clean signal, process it through the oracle and write paired WAV splits."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    x = render_source(plan, rng)
    y = apply_effect(x, params, plan.sample_rate)
    x32, y32 = x.astype(np.float32), y.astype(np.float32)
    pp = params_to_dict(params)
    manifest = DatasetManifest(plan.sample_rate, pp["effect"], pp["params"],
                               _write_pairs(x32, y32, out_dir, plan.sample_rate),
                               {"seed": seed, "plan": plan.to_dict()})
    manifest.save(out_dir / "manifest.json")
    return manifest


def ingest_pairs(input_wav, target_wav, out_dir) -> DatasetManifest:
    """Build a manifest from an externally recorded input/output pair (split 2:1:1 by time)."""
    x = read_wav(input_wav).require_rate()
    y = read_wav(target_wav).require_rate()
    if len(x) != len(y):
        raise ValueError("input and target recordings must have the same length")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(x.sample_rate, None, None,
                               _write_pairs(x.samples, y.samples, out_dir, x.sample_rate),
                               {"source": {"input": str(input_wav), "target": str(target_wav)}})
    manifest.save(out_dir / "manifest.json")
    return manifest
