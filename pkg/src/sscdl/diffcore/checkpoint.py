"""Self-describing binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic b"SSCDLCKP"
    4 bytes   uint32 format version (currently 1)
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header: {"meta": {...}, "entries": [...]}
    ...       payload: every array as float64 LE, in entry order
    32 bytes  SHA-256 over everything above

Each header entry records ``name``, ``shape``, original ``dtype`` and the
element ``offset`` into the payload.  Floating arrays of 64 bits or fewer
round-trip bit-exactly through float64.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSCDLCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if not np.issubdtype(arr.dtype, np.floating) or arr.dtype.itemsize > 8:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset})
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        offset += arr.size
    header = json.dumps({"meta": meta or {}, "entries": entries}, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> tuple:
    """Returns ``(arrays, meta)``; raises :class:`CheckpointError` on corruption."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (file corrupt)")
    version, hlen = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 12
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    payload = np.frombuffer(body, dtype="<f8", offset=start + hlen)
    arrays = {}
    for e in header["entries"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        vals = payload[e["offset"]:e["offset"] + count]
        arrays[e["name"]] = vals.astype(np.dtype(e["dtype"])).reshape(e["shape"])
    return arrays, header["meta"]
