"""RVFT binary tensor format.

Layout: magic ``b"RVFT"``, version byte (1), rank byte, ``rank`` extents as
uint32 little-endian, then the values as float32 little-endian, row-major.
"""
from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"RVFT"
VERSION = 1


class TensorFormatError(OSError):
    """Malformed or truncated RVFT / checkpoint data."""


def encode(array) -> bytes:
    a = np.asarray(getattr(array, "data", array))
    if a.ndim > 255:
        raise TensorFormatError(f"rank {a.ndim} too large")
    head = MAGIC + bytes([VERSION, a.ndim]) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode(buf: bytes, offset: int = 0):
    """Decode one tensor starting at ``offset``; returns (array, next_offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise TensorFormatError(f"bad magic at byte {offset}: {buf[offset:offset + 4]!r}")
    version, rank = buf[offset + 4], buf[offset + 5]
    if version != VERSION:
        raise TensorFormatError(f"unsupported RVFT version {version}")
    pos = offset + 6
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    end = pos + 4 * count
    if end > len(buf):
        raise TensorFormatError("truncated tensor data")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(shape)
    return data, end


def save(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data, _ = decode(fh.read())
    return data
