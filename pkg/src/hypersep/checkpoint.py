"""Versioned binary checkpoint container.

Layout: 8-byte magic, uint32 version, uint64 header length, JSON header,
then raw little-endian float64 tensor data in manifest order. The header
carries the tensor manifest (names, shapes, byte offsets), the model config
(hierarchy, curvature, mode, embedding dim, encoder sizes), and the dsp
config. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams

MAGIC = b"HSEPCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: ModelParams, extra: dict | None = None) -> None:
    names = sorted(model.tensors)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(model.tensors[name], dtype="<f8")
        blobs.append(arr.tobytes())
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = {"tensors": manifest, "config": model.config.to_dict(), "extra": extra or {}}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack("<I", raw[8:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (header_len,) = struct.unpack("<Q", raw[12:20])
    header = json.loads(raw[20 : 20 + header_len].decode("utf-8"))
    data = raw[20 + header_len :]
    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(data[start : start + n], dtype="<f8").reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    config = ModelConfig.from_dict(header["config"])
    return ModelParams(config, tensors), header.get("extra", {})
