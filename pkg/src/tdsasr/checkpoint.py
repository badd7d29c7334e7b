"""Versioned binary container for named float64 tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"TDSC"
    version u32      currently 1
    meta    u64 byte length + UTF-8 JSON object
    count   u64      number of tensor records
    record  u32 name byte length + UTF-8 name
            u32 ndim + u64 per dim
            float64 little-endian values, row-major

The same container stores model parameters (keyed by parameter path) and
cached feature matrices. Readers reject unknown magic or versions.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"TDSC"
VERSION = 1


def save_container(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(data.tobytes())


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a tensor container (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        (meta_len,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<Q", fh.read(8))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated record '{name}'")
            tensors[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return tensors, meta
