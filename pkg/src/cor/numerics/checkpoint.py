"""Binary checkpoint: magic, version, JSON header, float32 LE payloads.

Layout::

    b"CORCKPT\\0"            8 bytes
    version                 uint32 LE
    header length           uint32 LE
    header                  UTF-8 JSON {"format", "version", "params": [{"name", "shape"}], "meta"}
    payloads                float32 LE, one per entry of "params", in order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from cor.errors import CheckpointError

MAGIC = b"CORCKPT\0"
FORMAT = "cor-checkpoint"
VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    header = {
        "format": FORMAT,
        "version": VERSION,
        "params": [{"name": n, "shape": list(np.shape(a))} for n, a in params.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for a in params.values():
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        version, n = struct.unpack_from("<II", raw, 8)
        header = json.loads(raw[16 : 16 + n])
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt header") from e
    if version != VERSION or header.get("version") != VERSION or header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 16 + n
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f4").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return params, header.get("meta", {})
