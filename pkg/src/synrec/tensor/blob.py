"""Named tensor blobs.

Layout (little-endian): ``b"SGT1"``, u64 tensor count, then per tensor u64 name
length, UTF-8 name, u64 rank, rank x u64 dims, float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

MAGIC = b"SGT1"


class BlobFormatError(ValueError):
    pass


def dumps(tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<Q", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<Q", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<Q", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> Dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise BlobFormatError(f"bad magic {buf[:4]!r} at offset 0 (expected {MAGIC!r})")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise BlobFormatError(f"truncated tensor blob at offset {pos} (wanted {n} bytes)")
        out = buf[pos : pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<Q", take(8))
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<Q", take(8))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank)) if rank else ()
        n = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise BlobFormatError(f"trailing bytes after offset {pos}")
    return out


def save(path: Union[str, Path], tensors: Dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
