"""Flat binary checkpoint files (magic ``DFCK``).

Layout, all little-endian:

    "DFCK" | u32 version | u32 tensor_count
    per tensor: u16 name_len | name utf-8 | u32 rank | u32 dim... | f32 payload

Tensors are written sorted by name so files are byte-stable for a given
state dict. Arrays round-trip as float32.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DFCK"
VERSION = 1


def save_checkpoint(path, tensors):
    """Write a ``{name: array}`` dict; raises on non-finite values."""
    names = sorted(tensors)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(names)))
        for name in names:
            arr = np.asarray(tensors[name], dtype=np.float32)
            if not np.isfinite(arr).all():
                raise FloatingPointError(f"non-finite values in checkpoint tensor '{name}'")
            enc = name.encode("utf-8")
            if len(enc) > 0xFFFF:
                raise ValueError(f"tensor name too long: {name!r}")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into a ``{name: float32 array}`` dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {raw[:4]!r})")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        out[name] = arr.astype(np.float32)
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes after last tensor")
    return out
