"""Versioned binary container for named arrays.

Layout (all little-endian):

    magic   4 bytes  b"MMST"
    version u32      currently 1
    count   u64      number of records
    record  x count:
        name_len u32, name utf-8 bytes
        rank     u32
        extents  rank x u64
        values   prod(extents) x f32, C order

Round trips are bit-exact for float32 arrays.  Arrays of other float
dtypes are stored as float32 (the training default); loading returns
float32 and callers cast as needed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"MMST"
VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(arrays))]
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", raw.ndim))
        chunks.append(struct.pack(f"<{raw.ndim}Q", *raw.shape))
        chunks.append(raw.tobytes())
    path.write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    view = memoryview(buf)
    if view[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    (count,) = struct.unpack_from("<Q", view, 8)
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(view, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            out[name] = arr.copy()
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt record: {exc}") from None
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes after last record")
    return out
