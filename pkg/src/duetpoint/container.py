"""Versioned named-tensor binary container.

Shared by weight files and processed-sample caches. Layout:

    magic   b"DPTN"
    version u32 little-endian
    hlen    u32 little-endian
    header  hlen bytes of UTF-8 JSON:
              {"meta": {...}, "tensors": [{"name", "shape", "dtype"}]}
    data    tensors back to back, little-endian, in header order

Floats are stored as little-endian float32 unless a tensor explicitly
declares float64 (used where bit-exact round-trips matter).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DPTN"
VERSION = 1

_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8", "u1": "|u1"}


def save_container(path, tensors: dict, meta: dict | None = None, dtype: str = "f8"):
    """Write named arrays plus a JSON metadata block.

    dtype is the default storage type; integer arrays keep an integer
    encoding regardless.
    """
    path = Path(path)
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if np.issubdtype(arr.dtype, np.integer):
            code = "i8"
        elif arr.dtype == np.uint8:
            code = "u1"
        else:
            code = dtype
        a = arr.astype(_DTYPES[code])
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta or {}, "tensors": entries}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_container(path):
    """Read a container; returns (tensors: dict[str, ndarray], meta: dict)."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a duetpoint container (bad magic)")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: container version {version}, expected {VERSION}")
        header = json.loads(f.read(hlen).decode())
        tensors = {}
        for e in header["tensors"]:
            n = int(np.prod(e["shape"])) if e["shape"] else 1
            dt = np.dtype(_DTYPES[e["dtype"]])
            buf = f.read(n * dt.itemsize)
            if len(buf) != n * dt.itemsize:
                raise ValueError(f"{path}: truncated tensor {e['name']!r}")
            arr = np.frombuffer(buf, dtype=dt).reshape(e["shape"])
            tensors[e["name"]] = arr.astype(np.float64) if e["dtype"] in ("f4", "f8") else arr.copy()
    return tensors, header["meta"]
