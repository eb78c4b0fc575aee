"""Flat binary checkpoint container.

Layout: magic "PIBK1", then one record per parameter: name length (u32 LE),
utf-8 name, rank (u32 LE), dims (u32 LE each), values (f64 LE, row-major).
Records appear in model parameter order and are read back until EOF.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PIBK1"


class CheckpointError(ValueError):
    """Raised for malformed or truncated checkpoint files."""


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    blob = bytearray(MAGIC)
    for name, arr in state.items():
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:5]!r}, expected {MAGIC!r}")
    state: dict[str, np.ndarray] = {}
    offset = 5

    def read(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    while offset < len(data):
        (name_len,) = struct.unpack("<I", read(4, "name length"))
        name = read(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", read(4, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", read(4 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = read(8 * count, f"values of {name!r}")
        state[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    return state
