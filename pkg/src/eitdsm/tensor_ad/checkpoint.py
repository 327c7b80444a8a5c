"""UITW checkpoint files: named float64 tensors, little-endian.

Layout: magic ``UITW``, u8 version, u32 tensor count, then per tensor a
u32 name length, the UTF-8 name, u8 rank, u32 dims and the f64 payload.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"UITW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<BI", VERSION, len(tensors))
    for name, arr in tensors.items():
        a = np.array(getattr(arr, "data", arr), dtype="<f8", order="C")
        nb = name.encode("utf-8")
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<B", a.ndim)
        out += struct.pack(f"<{a.ndim}I", *a.shape)
        out += a.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<BI")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (n,) = take("<I")
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated name")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = take("<B")
        dims = take(f"<{rank}I") if rank else ()
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(buf):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return tensors


def encode_text(text: str) -> np.ndarray:
    """Store text as a float64 vector of byte codes (for config echoes)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def decode_text(arr: np.ndarray) -> str:
    return np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8")
