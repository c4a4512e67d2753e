"""Flat binary checkpoints: parameter path -> shape + float64 payload.

Byte layout (all integers little-endian, documented so files round-trip
bit-exactly; see README for the same table):

    magic   4 bytes   b"RFCK"
    version u32       1
    count   u32       number of entries
    entry*  repeated, sorted by path for canonical bytes:
        path_len u32
        path     path_len bytes, UTF-8
        ndim     u32
        dims     ndim x u64
        data     prod(dims) x float64, C order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"RFCK"
VERSION = 1


def save_checkpoint(params: dict[str, Tensor], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name].data, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (path_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(path_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(dims)
            out[name] = data.astype(np.float64)
    return out


def apply_checkpoint(params: dict[str, Tensor], loaded: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into live parameters, validating names and shapes."""
    missing = sorted(set(params) - set(loaded))
    if missing:
        raise ValueError(f"checkpoint missing parameter {missing[0]!r}")
    extra = sorted(set(loaded) - set(params))
    if extra:
        raise ValueError(f"checkpoint has unknown parameter {extra[0]!r}")
    for name, tensor in params.items():
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise ValueError(
                f"shape mismatch for parameter {name!r}: "
                f"checkpoint {arr.shape} vs model {tensor.data.shape}"
            )
    for name, tensor in params.items():
        tensor.data = loaded[name].copy()
