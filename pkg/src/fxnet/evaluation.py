"""Offline inference, aggregate metrics and windowed error-over-time analysis."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .audio import SAMPLE_RATE, AudioBuffer
from .losses import LossConfig, mr_stft, stft_distance
from .streaming import process_stream

WINDOW = 8192
WINDOW_STFT = (2048, 512, 2048)


def process_offline(model, buffer: AudioBuffer, sample_rate: int = SAMPLE_RATE) -> AudioBuffer:
    """Whole-signal forward pass with zero initial state."""
    buffer.require_rate(sample_rate)
    with T.no_grad():
        x = T.Tensor(buffer.samples.reshape(1, -1), dtype=model.parameters()[0].dtype)
        y = model(x)
    return AudioBuffer(y.data.reshape(-1), buffer.sample_rate)


def process_chunked(model, buffer: AudioBuffer, chunk_size: int,
                    sample_rate: int = SAMPLE_RATE) -> AudioBuffer:
    buffer.require_rate(sample_rate)
    return AudioBuffer(process_stream(model, buffer.samples, chunk_size), buffer.sample_rate)


def _check_lengths(pred, target):
    pred = np.asarray(pred, dtype=np.float32).reshape(-1)
    target = np.asarray(target, dtype=np.float32).reshape(-1)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} vs {target.shape[0]}")
    return pred, target


def spectral_error(pred, target, resolution=WINDOW_STFT) -> float:
    with T.no_grad():
        return stft_distance(T.Tensor(pred), T.Tensor(target), *resolution).item()


def windowed_errors(pred, target, window: int = WINDOW) -> list[dict]:
    """Per-window L1 and single-resolution STFT error; a trailing partial window is dropped."""
    pred, target = _check_lengths(pred, target)
    rows = []
    for w in range(len(pred) // window):
        lo, hi = w * window, (w + 1) * window
        p, t = pred[lo:hi], target[lo:hi]
        rows.append({"window_index": w, "start_sample": lo,
                     "l1": float(np.mean(np.abs(p - t), dtype=np.float64)),
                     "stft": spectral_error(p, t)})
    return rows


def window_statistics(rows: Sequence[dict]) -> dict:
    """Median and 95th percentile of each windowed metric."""
    out = {}
    for key in ("l1", "stft"):
        v = np.array([float(r[key]) for r in rows])
        out[key] = {"median": float(np.median(v)), "p95": float(np.percentile(v, 95))}
    return out


def compare_distributions(a: Sequence[dict], b: Sequence[dict]) -> dict:
    """Whether ``a`` has a higher median and a heavier upper tail than ``b``, per metric."""
    sa, sb = window_statistics(a), window_statistics(b)
    return {k: {"higher_median": sa[k]["median"] > sb[k]["median"],
                "heavier_tail": sa[k]["p95"] > sb[k]["p95"],
                "a": sa[k], "b": sb[k]} for k in sa}


def histogram(rows: Sequence[dict], bins: int = 30) -> list[dict]:
    out = []
    for key in ("l1", "stft"):
        v = np.array([float(r[key]) for r in rows])
        if v.size == 0:
            continue
        counts, edges = np.histogram(v, bins=bins)
        out.extend({"metric": key, "bin_left": float(lo), "bin_right": float(hi), "count": int(c)}
                   for c, lo, hi in zip(counts, edges[:-1], edges[1:]))
    return out


@dataclass
class EvalReport:
    model: str
    checkpoint: Optional[str]
    params: int
    l1: float
    mrstft: float
    files: list = field(default_factory=list)
    windowed: list = field(default_factory=list)
    histogram: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.l1 + self.mrstft


def evaluate(model, pairs, name: str, checkpoint: Optional[str] = None,
             loss_cfg: Optional[LossConfig] = None, chunk_size: Optional[int] = None,
             window: int = WINDOW, file_names: Optional[Sequence[str]] = None) -> EvalReport:
    """Metrics over (input, target) pairs.

    Aggregate L1 is the mean absolute error over all samples; aggregate
    MR-STFT is the sample-weighted mean of per-file values. With
    ``chunk_size`` inference goes through the streaming engine, which keeps
    memory bounded on long files.
    """
    loss_cfg = loss_cfg or LossConfig()
    files, windowed = [], []
    abs_sum, n_total, st_weighted = 0.0, 0, 0.0
    for k, (x, y) in enumerate(pairs):
        buf = AudioBuffer(x)
        pred = (process_chunked(model, buf, chunk_size) if chunk_size else process_offline(model, buf)).samples
        pred, y = _check_lengths(pred, y)
        err = float(np.sum(np.abs(pred - y), dtype=np.float64))
        with T.no_grad():
            st = mr_stft(T.Tensor(pred), T.Tensor(y), loss_cfg).item()
        fname = file_names[k] if file_names else f"file{k}"
        files.append({"file": fname, "samples": len(y), "l1": err / len(y), "mrstft": st})
        abs_sum += err
        n_total += len(y)
        st_weighted += st * len(y)
        for row in windowed_errors(pred, y, window):
            windowed.append(dict(row, file=fname))
    return EvalReport(name, checkpoint, model.num_parameters(), abs_sum / n_total,
                      st_weighted / n_total, files, windowed, histogram(windowed))


def write_report(report: EvalReport, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "windowed.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["window_index", "start_sample", "l1", "stft"])
        for i, r in enumerate(report.windowed):
            w.writerow([i, r["start_sample"], repr(r["l1"]), repr(r["stft"])])
    with open(out_dir / "histogram.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["metric", "bin_left", "bin_right", "count"])
        w.writeheader()
        w.writerows(report.histogram)
    (out_dir / "report.json").write_text(json.dumps(asdict(report), indent=2) + "\n")


def read_windowed_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [{"window_index": int(r["window_index"]), "start_sample": int(r["start_sample"]),
                 "l1": float(r["l1"]), "stft": float(r["stft"])} for r in csv.DictReader(f)]


def compare(reports: Sequence[EvalReport]) -> list[dict]:
    """Summary rows sorted by model name; ``best_flag`` marks the lowest L1 + MR-STFT.

    Ties on the total go to the lower MR-STFT, then to the model name, so the
    result does not depend on input order.
    """
    if not reports:
        return []
    best = min(reports, key=lambda r: (r.total, r.mrstft, r.model))
    rows = [{"model": r.model, "params": r.params, "l1": r.l1, "mrstft": r.mrstft,
             "best_flag": int(r is best)} for r in reports]
    return sorted(rows, key=lambda r: (r["model"], r["l1"], r["mrstft"]))


def write_summary(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["model", "params", "l1", "mrstft", "best_flag"])
        w.writeheader()
        w.writerows(rows)
