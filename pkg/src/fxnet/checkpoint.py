"""Checkpoint files: a JSON header followed by little-endian float32 blobs.

Layout::

    b"FXCK"  | uint32 LE header length | UTF-8 JSON header | blob section

The header carries ``format_version``, ``model_spec``, ``training_state``
and a ``tensors`` table of ``{name, shape, offset, nbytes}`` where offsets
are relative to the start of the blob section.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .models import ModelSpec, assemble

MAGIC = b"FXCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    spec: ModelSpec
    tensors: dict
    training_state: dict = field(default_factory=dict)

    def model_state(self) -> dict:
        return {k[len("model."):]: v for k, v in self.tensors.items() if k.startswith("model.")}

    def build_model(self):
        model = assemble(self.spec)
        model.load_state_dict(self.model_state())
        return model


def save_checkpoint(path, model, training_state: Optional[dict] = None,
                    extra_tensors: Optional[dict] = None) -> Path:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors.update(extra_tensors or {})
    table = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "model_spec": model.spec.to_dict(),
        "training_state": training_state or {},
        "tensors": table,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC + struct.pack("<I", len(raw)) + raw)
        for blob in blobs:
            f.write(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC or len(raw) < 8:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    base = 8 + hlen
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        blob = raw[start:start + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise CheckpointError(f"{path}: tensor {entry['name']} truncated")
        tensors[entry["name"]] = np.frombuffer(blob, dtype="<f4").astype(np.float32).reshape(entry["shape"])
    return Checkpoint(ModelSpec.from_dict(header["model_spec"]), tensors, header.get("training_state", {}))
