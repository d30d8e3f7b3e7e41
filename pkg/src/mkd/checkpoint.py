"""Binary checkpoints: 8-byte magic, u32 version, a JSON metadata block, then
length-prefixed named float64 arrays. Everything little-endian so that
save -> load -> save is byte-identical."""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"MKDCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_u32(n):
    return struct.pack("<I", n)


def save_checkpoint(path: str, arrays: dict, meta: dict = None):
    """Write named float64 arrays plus a JSON metadata block."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_pack_u32(VERSION))
        f.write(_pack_u32(len(meta_bytes)))
        f.write(meta_bytes)
        f.write(_pack_u32(len(arrays)))
        for name in sorted(arrays):
            # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
            arr = np.asarray(arrays[name], dtype="<f8")
            name_b = name.encode()
            f.write(_pack_u32(len(name_b)))
            f.write(name_b)
            f.write(_pack_u32(arr.ndim))
            for d in arr.shape:
                f.write(_pack_u32(d))
            f.write(arr.tobytes())


def load_checkpoint(path: str):
    """Returns (arrays dict, meta dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = 8

    def u32():
        nonlocal off
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        return n

    version = u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta_len = u32()
    meta = json.loads(raw[off : off + meta_len].decode())
    off += meta_len
    arrays = {}
    for _ in range(u32()):
        name_len = u32()
        name = raw[off : off + name_len].decode()
        off += name_len
        ndim = u32()
        shape = tuple(u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += count * 8
        arrays[name] = arr.copy()
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return arrays, meta
