"""Checkpoint files: a JSON header followed by float32 little-endian blobs.

Layout: ``b"RSCK"``, u32 header length, UTF-8 JSON header, then each tensor's
data in header order. The header lists ``{"name", "shape", "kind"}`` entries
(kind is ``param`` or ``buffer``) plus a ``config_hash`` and free ``meta``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"RSCK"


def state_dict(module) -> dict[str, tuple[str, np.ndarray]]:
    state = {name: ("param", p.data) for name, p in module.named_parameters()}
    state.update({name: ("buffer", b) for name, b in module.named_buffers()})
    return state


def save_checkpoint(path, module, config_hash: str = "", meta: dict | None = None) -> None:
    state = state_dict(module)
    header = {
        "config_hash": config_hash,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(a.shape), "kind": k} for n, (k, a) in state.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", len(blob)) + blob)
        for _, arr in state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (size,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + size].decode("utf-8"))
    offset = 8 + size
    arrays = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        offset += 4 * count
    if offset != len(raw):
        raise ValueError("checkpoint size does not match its header")
    return header, arrays


def load_checkpoint(path, module) -> dict:
    """Copy tensors from ``path`` into ``module``; returns the header."""
    header, arrays = read_checkpoint(path)
    state = state_dict(module)
    missing = set(state) ^ set(arrays)
    if missing:
        raise ValueError(f"checkpoint and model disagree on tensors: {sorted(missing)[:5]}")
    for name, (_, target) in state.items():
        if target.shape != arrays[name].shape:
            raise ValueError(f"shape mismatch for {name}: {arrays[name].shape} vs {target.shape}")
        target[...] = arrays[name]
    return header
