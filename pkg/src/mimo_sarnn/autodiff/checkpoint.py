"""Flat little-endian binary checkpoint format.

Layout::

    u32 format_version
    u32 parameter_count
    repeated parameter_count times:
        u32 name_length, name bytes (utf-8)
        u32 rank, rank x u64 dims
        float64 values, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    chunks = [struct.pack("<II", FORMAT_VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.array(arr, dtype="<f8", order="C")  # keeps rank 0, unlike ascontiguousarray
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    version, count = struct.unpack_from("<II", buf, 0)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 8
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off: off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", buf, off)
        off += 8 * rank
        size = int(np.prod(dims)) if rank else 1
        state[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(dims).copy()
        off += 8 * size
    if off != len(buf):
        raise ValueError("trailing bytes in checkpoint")
    return state
