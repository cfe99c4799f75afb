"""Raw tensor container: magic "LSCT", little-endian header, float32 payload.

Layout: 4-byte magic, u16 version (currently 1), u16 rank, rank u32 extents,
then the row-major float32 values. Used for occupancy grids, latents and
checkpoint weights. Malformed files raise :class:`TensorFormatError` carrying
the byte offset of the problem.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LSCT"
VERSION = 1
MAX_RANK = 8

__all__ = ["TensorFormatError", "write_tensor", "read_tensor"]


class TensorFormatError(ValueError):
    def __init__(self, path, offset: int, message: str) -> None:
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def write_tensor(path, values: np.ndarray) -> None:
    """Write an array as float32. Rank 0 is stored as rank 0 with no extents."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim > MAX_RANK:
        raise ValueError(f"tensor rank {arr.ndim} exceeds {MAX_RANK}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HH", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise TensorFormatError(path, 0, f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise TensorFormatError(path, 4, "truncated header")
    version, rank = struct.unpack_from("<HH", raw, 4)
    if version != VERSION:
        raise TensorFormatError(path, 4, f"unsupported version {version}")
    if rank > MAX_RANK:
        raise TensorFormatError(path, 6, f"rank {rank} exceeds {MAX_RANK}")
    header_end = 8 + 4 * rank
    if len(raw) < header_end:
        raise TensorFormatError(path, len(raw), f"truncated extents, need {header_end} bytes")
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    count = 1
    for s in shape:
        count *= s
    expected = header_end + 4 * count
    if len(raw) < expected:
        raise TensorFormatError(path, len(raw), f"truncated payload, need {expected} bytes")
    if len(raw) > expected:
        raise TensorFormatError(path, expected, f"{len(raw) - expected} trailing bytes")
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=header_end)
    return values.reshape(shape).copy()
