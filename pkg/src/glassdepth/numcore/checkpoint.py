"""Named-tensor container file with bit-exact round trip.

Layout (all integers little-endian):

    magic   4s   b"GDCK"
    version u32
    step    u64
    count   u32
    entry*  name_len:u16, name:utf-8, dtype:u8, ndim:u8, shape:u64*ndim, raw LE data

dtype tags: 0=float32, 1=float64, 2=int64, 3=uint8. JSON metadata rides along
as uint8 entries, so a checkpoint fully describes model config and packing.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import DataError

MAGIC = b"GDCK"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("<u1")}
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2,
         np.dtype("uint8"): 3}


def save(path: str, tensors: dict[str, np.ndarray], step: int = 0) -> None:
    """Write atomically (temp file + rename)."""
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQI", VERSION, step, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _TAGS:
                raise DataError(f"checkpoint: unsupported dtype {arr.dtype} for {name!r}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _TAGS[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    os.replace(tmp, path)


def load(path: str) -> tuple[dict[str, np.ndarray], int]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic)")
        version, step, count = struct.unpack("<IQI", f.read(16))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            tag, ndim = struct.unpack("<BB", f.read(2))
            shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
            dt = _DTYPES[tag]
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(n * dt.itemsize)
            if len(buf) != n * dt.itemsize:
                raise DataError(f"{path}: truncated data for entry {name!r}")
            arr = np.frombuffer(buf, dtype=dt).reshape(shape)
            out[name] = arr.astype(dt.newbyteorder("="), copy=True).reshape(shape)
    return out, step


def pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def unpack_json(arr: np.ndarray):
    return json.loads(arr.tobytes().decode("utf-8"))
