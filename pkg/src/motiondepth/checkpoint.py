"""Binary checkpoint format for named float32 tensors.

Layout, all integers little-endian u32:

    magic  "M4DC"
    version (= 1)
    tensor count
    per tensor: name byte length, UTF-8 name, rank, dims, float32 data

Tensors are written in the order given, so saving the same mapping twice
produces byte-identical files.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .exceptions import CorruptCheckpoint, MissingFile

MAGIC = b"M4DC"
VERSION = 1

_MAX_RANK = 32  # sanity bound while parsing untrusted dims


def save_checkpoint(path, tensors):
    """Write an ordered name -> ndarray mapping; values stored as float32."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(tensors))
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint back as an ordered name -> float32 ndarray dict."""
    if not os.path.exists(path):
        raise MissingFile(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()

    view = memoryview(blob)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise CorruptCheckpoint(f"{path}: truncated while reading {what}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")

    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        if rank > _MAX_RANK:
            raise CorruptCheckpoint(f"{path}: implausible rank {rank} for {name!r}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = take(4 * n, f"data of {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    if pos != len(view):
        raise CorruptCheckpoint(f"{path}: {len(view) - pos} trailing bytes")
    return tensors
