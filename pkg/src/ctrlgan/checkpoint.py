"""Versioned checkpoint container.

Single file: 8-byte magic, uint32 version, uint64 header length, a JSON header
(config records, scalar state, tensor manifest), then the raw tensor payload.
Float tensors are stored as little-endian 32-bit floats; byte tensors (RNG
state) as uint8. Writes go through a temp file and an atomic rename so an
interrupted save never corrupts the previous checkpoint.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError

MAGIC = b"CGANCKPT"
VERSION = 1

_DTYPES = {"f4": np.dtype("<f4"), "u1": np.dtype("u1")}


def save_checkpoint(path, configs: dict, tensors: dict, scalars: dict | None = None) -> None:
    path = Path(path)
    manifest = []
    payload = bytearray()
    for name, tensor in tensors.items():
        if torch.is_tensor(tensor):
            arr = tensor.detach().cpu().numpy()
        else:
            arr = np.asarray(tensor)
        if arr.dtype == np.uint8:
            code = "u1"
            raw = arr.tobytes(order="C")
        else:
            code = "f4"
            raw = arr.astype("<f4").tobytes(order="C")
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": code, "offset": len(payload), "nbytes": len(raw)}
        )
        payload += raw
    header = json.dumps(
        {"configs": configs, "scalars": scalars or {}, "tensors": manifest}
    ).encode("utf-8")

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        fh.write(bytes(payload))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (configs, tensors, scalars) with tensors as
    torch tensors (float32 or uint8)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file (bad magic)")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ValidationError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(arr)
    return header["configs"], tensors, header["scalars"]
