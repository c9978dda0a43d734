"""Binary parameter checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"GPRM"
    version u32      currently 1
    count   u32      number of records
    record  repeated:
        name_len u16, name utf-8 bytes
        ndim     u8,  dims u32 * ndim
        data     float64 little-endian, row-major

The same container backs model checkpoints and optimizer-free snapshots.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"GPRM"
VERSION = 1


def save_params(path, named_params) -> None:
    """`named_params`: iterable of (name, tensor-or-array)."""
    records = []
    for name, p in named_params:
        arr = np.ascontiguousarray(getattr(p, "values", p), dtype="<f8")
        records.append((name, arr))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(records)))
        for name, arr in records:
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a parameter checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = data.astype(np.float64).copy()
    return out
