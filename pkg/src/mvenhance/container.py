"""Versioned binary array container used for checkpoints.

Layout: magic, version byte, u64 header length, canonical-JSON header (meta +
array manifest), then raw little-endian array payloads. Writing the same
arrays and meta twice yields byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"MVCK"
VERSION = 1


class ContainerError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def save_container(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = canonical_json({"meta": meta, "entries": entries}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ContainerError(f"{path}: not a checkpoint container (bad magic)")
        (version,) = struct.unpack("<B", f.read(1))
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported container version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        payload = f.read()
    arrays = {}
    for e in header["entries"]:
        start, n = e["offset"], e["nbytes"]
        arrays[e["name"]] = np.frombuffer(payload[start : start + n],
                                          dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]
