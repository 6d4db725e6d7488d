"""Versioned binary checkpoints.

Layout (little endian): 4-byte magic, u32 format version, u32 header length,
UTF-8 JSON header ``{"meta": {...}, "arrays": [[name, shape], ...]}``, then
every array's float64 values in header order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def pack(magic: bytes, meta: dict, arrays: dict) -> bytes:
    header = json.dumps(
        {"meta": meta, "arrays": [[k, list(np.shape(v))] for k, v in arrays.items()]},
        sort_keys=True,
    ).encode()
    parts = [magic, struct.pack("<II", FORMAT_VERSION, len(header)), header]
    parts += [np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values()]
    return b"".join(parts)


def unpack(data: bytes, magic: bytes):
    if data[:4] != magic:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {magic!r}")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + hlen])
    off = 12 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += 8 * count
    if off != len(data):
        raise CheckpointError("checkpoint length does not match header")
    return header["meta"], arrays


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
