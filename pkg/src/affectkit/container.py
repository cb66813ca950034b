"""Versioned binary container for named float64 arrays ("AFEN").

Layout, all integers little-endian::

    b"AFEN"                 magic
    u16                     format version (1)
    u32, bytes              length and UTF-8 JSON metadata (sorted keys)
    u32                     array count
    per array:
      u16, bytes            length and UTF-8 name
      u8                    ndim
      u32 * ndim            dimensions
      f64 * prod(dims)      values, row-major
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AFEN"
VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        key = name.encode()
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ContainerError(f"truncated container reading {what} at offset {pos}")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise ContainerError("bad magic bytes: not an AFEN container")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    meta = json.loads(bytes(take(meta_len, "metadata")).decode())
    (count,) = struct.unpack("<I", take(4, "array count"))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode()
        (ndim,) = struct.unpack("<B", take(1, f"{name} ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name} shape"))
        size = int(np.prod(shape, dtype=np.int64))
        raw = take(8 * size, f"{name} values")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(view):
        raise ContainerError(f"{len(view) - pos} trailing bytes after last array")
    return meta, arrays


def save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
