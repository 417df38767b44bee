"""RIFF/WAVE reading and writing (PCM16, PCM24, float32)."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 44100

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV decoding problems."""


class MalformedWavError(WavError):
    """The file is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(WavError):
    """The container is valid but the sample encoding is not supported."""


class SampleRateError(WavError):
    """Audio is not at the rate the pipeline expects."""


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def require_rate(self, rate: int = SAMPLE_RATE) -> "AudioBuffer":
        if self.sample_rate != rate:
            raise SampleRateError(
                f"audio is at {self.sample_rate} Hz but {rate} Hz is required; "
                "resample it externally (e.g. with sox or ffmpeg) first")
        return self


def read_wav(path) -> AudioBuffer:
    """Decode a WAV file to mono float32; multichannel audio is averaged."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise MalformedWavError(f"{path}: chunk {cid!r} truncated")
        if cid == b"fmt ":
            if size < 16:
                raise MalformedWavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == _EXTENSIBLE and size >= 40:
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWavError(f"{path}: no fmt chunk")
    if data is None:
        raise MalformedWavError(f"{path}: no data chunk")
    codec, channels, rate, _, block_align, bits = fmt
    if channels < 1:
        raise MalformedWavError(f"{path}: channel count {channels}")
    if codec == _PCM and bits == 16:
        x = np.frombuffer(data[:len(data) // 2 * 2], dtype="<i2").astype(np.float32) / 32768.0
    elif codec == _PCM and bits == 24:
        b = np.frombuffer(data[:len(data) // 3 * 3], dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v.astype(np.float32) / float(1 << 23)
    elif codec == _FLOAT and bits == 32:
        x = np.frombuffer(data[:len(data) // 4 * 4], dtype="<f4").astype(np.float32)
    else:
        raise UnsupportedWavError(f"{path}: unsupported encoding (format tag {codec}, {bits} bits)")
    frames = x.shape[0] // channels
    x = x[:frames * channels].reshape(frames, channels)
    mono = x[:, 0] if channels == 1 else x.mean(axis=1, dtype=np.float32)
    return AudioBuffer(mono, rate)


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def write_wav(buffer: AudioBuffer, path, fmt: str = "float32") -> None:
    """Write a mono buffer as ``pcm16`` or ``float32``."""
    x = np.asarray(buffer.samples, dtype=np.float32)
    if fmt == "pcm16":
        q = _round_half_away(np.clip(x.astype(np.float64), -1.0, 1.0) * 32768.0)
        payload = np.clip(q, -32768, 32767).astype("<i2").tobytes()
        tag, bits = _PCM, 16
    elif fmt == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = _FLOAT, 32
    else:
        raise ValueError(f"unknown WAV format {fmt!r} (use 'pcm16' or 'float32')")
    block = bits // 8
    rate = int(buffer.sample_rate)
    fmt_chunk = struct.pack("<HHIIHH", tag, 1, rate, rate * block, block, bits)
    riff_size = 4 + (8 + len(fmt_chunk)) + (8 + len(payload))
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", riff_size) + b"WAVE")
        f.write(b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk)
        f.write(b"data" + struct.pack("<I", len(payload)) + payload)
