"""Single-file checkpoint bundle.

Layout (all integers little-endian):

    bytes 0..7    magic b"IGAHIDE\\0"
    u32           format version (currently 1)
    u32           config length; that many bytes of UTF-8 JSON
    u32           blob count
    per blob:
        u32       name length; that many bytes of UTF-8 name
        u8        dtype code: 0 = float32, 1 = float64, 2 = int64
        u32       ndim; ndim x u32 dims
        raw data, little-endian IEEE-754 / two's complement

Writes are atomic (temp file + rename).
"""

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"IGAHIDE\0"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(RuntimeError):
    pass


def save_bundle(path, config: dict, arrays: dict) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config).encode("utf-8")
    chunks.append(struct.pack("<I", len(cfg)))
    chunks.append(cfg)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            arr = arr.astype(np.float32)
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", _CODES[arr.dtype]))
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def load_bundle(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    r = _Reader(path.read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"not a checkpoint bundle: {path}")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    config = json.loads(r.take(r.u32()).decode("utf-8"))
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        dtype = _DTYPES.get(r.u8())
        if dtype is None:
            raise CheckpointError(f"unknown dtype code in blob '{name}'")
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * dtype.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return config, arrays
