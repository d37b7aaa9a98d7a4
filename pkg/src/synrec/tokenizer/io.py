"""Binary embedding and codebook files.

Embedding file: ``b"SGE1"``, modality byte (0 text, 1 vision), u64 item count,
u64 dim, then float32 values row-major; a sidecar text file lists the item id of
each row. Codebook file: ``b"SGC1"``, modality byte, u64 D, K, d, then float32
codewords level-major. All integers and floats are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .rqvae import CodebookStack
from .vocab import MODALITIES

EMB_MAGIC = b"SGE1"
CODEBOOK_MAGIC = b"SGC1"

PathLike = Union[str, Path]


class FormatError(ValueError):
    pass


def _modality_byte(modality: str) -> bytes:
    return bytes([MODALITIES.index(modality)])


def _modality_from(b: int, offset: int) -> str:
    if b >= len(MODALITIES):
        raise FormatError(f"bad modality byte {b} at offset {offset}")
    return MODALITIES[b]


def _check_magic(buf: bytes, magic: bytes, path) -> None:
    if len(buf) < 4 or buf[:4] != magic:
        raise FormatError(f"{path}: bad magic {buf[:4]!r} at offset 0 (expected {magic!r})")


def sidecar_path(path: PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".ids")


def embeddings_to_bytes(modality: str, table: np.ndarray) -> bytes:
    table = np.asarray(table)
    n, dim = table.shape
    return EMB_MAGIC + _modality_byte(modality) + struct.pack("<QQ", n, dim) + np.ascontiguousarray(table, dtype="<f4").tobytes()


def write_embeddings(path: PathLike, modality: str, item_ids: List[str], table: np.ndarray) -> None:
    if len(item_ids) != len(table):
        raise ValueError("one item id per embedding row is required")
    Path(path).write_bytes(embeddings_to_bytes(modality, table))
    sidecar_path(path).write_text("".join(f"{i}\n" for i in item_ids), encoding="utf-8")


def read_embeddings(path: PathLike) -> Tuple[str, List[str], np.ndarray]:
    buf = Path(path).read_bytes()
    _check_magic(buf, EMB_MAGIC, path)
    if len(buf) < 21:
        raise FormatError(f"{path}: truncated header at offset {len(buf)}")
    modality = _modality_from(buf[4], 4)
    n, dim = struct.unpack("<QQ", buf[5:21])
    need = 21 + 4 * n * dim
    if len(buf) < need:
        raise FormatError(f"{path}: truncated data at offset {len(buf)} (expected {need} bytes)")
    if len(buf) > need:
        raise FormatError(f"{path}: trailing bytes after offset {need}")
    table = np.frombuffer(buf, dtype="<f4", offset=21, count=n * dim).reshape(n, dim).astype(np.float64)
    side = sidecar_path(path)
    ids = side.read_text(encoding="utf-8").splitlines() if side.exists() else [str(i) for i in range(n)]
    if len(ids) != n:
        raise FormatError(f"{side}: {len(ids)} ids for {n} rows")
    return modality, ids, table


def codebook_to_bytes(stack: CodebookStack) -> bytes:
    D, K, d = stack.codebooks.shape
    return (CODEBOOK_MAGIC + _modality_byte(stack.modality) + struct.pack("<QQQ", D, K, d)
            + np.ascontiguousarray(stack.codebooks, dtype="<f4").tobytes())


def write_codebook(path: PathLike, stack: CodebookStack) -> None:
    Path(path).write_bytes(codebook_to_bytes(stack))


def read_codebook(path: PathLike) -> CodebookStack:
    buf = Path(path).read_bytes()
    _check_magic(buf, CODEBOOK_MAGIC, path)
    if len(buf) < 29:
        raise FormatError(f"{path}: truncated header at offset {len(buf)}")
    modality = _modality_from(buf[4], 4)
    D, K, d = struct.unpack("<QQQ", buf[5:29])
    need = 29 + 4 * D * K * d
    if len(buf) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(buf)}")
    books = np.frombuffer(buf, dtype="<f4", offset=29).reshape(D, K, d).astype(np.float64)
    return CodebookStack(modality, books)
