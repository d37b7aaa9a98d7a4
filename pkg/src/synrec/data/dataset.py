"""In-memory corpus and its on-disk layout.

A dataset directory holds ``text.emb`` and ``vision.emb`` (with ``.ids``
sidecars), ``interactions.tsv`` with one ``user<TAB>item,item,...`` line per
user, and ``meta.cfg`` with summary counts. Tokenization adds
``identifiers.tsv`` and ``vocab.cfg``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..tokenizer.identifiers import ItemIdentifier, read_identifier_map, write_identifier_map
from ..tokenizer.io import FormatError, read_embeddings, write_embeddings
from ..tokenizer.vocab import TEXT, VISION, UnifiedVocabulary
from .config import format_kv, parse_kv

PathLike = Union[str, Path]

TEXT_FILE = "text.emb"
VISION_FILE = "vision.emb"
INTERACTIONS_FILE = "interactions.tsv"
META_FILE = "meta.cfg"
IDENTIFIER_FILE = "identifiers.tsv"
VOCAB_FILE = "vocab.cfg"


class DanglingReferenceError(ValueError):
    """Interactions mention items that are not in the catalogue."""

    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        shown = ", ".join(self.missing[:10]) + (" ..." if len(self.missing) > 10 else "")
        super().__init__(f"{len(self.missing)} unknown item id(s) in interactions: {shown}")


@dataclass
class Dataset:
    item_ids: List[str]
    text: np.ndarray
    vision: np.ndarray
    user_ids: List[str]
    sequences: List[List[int]]  # item indices, chronological
    latent: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.item_ids)
        if len(set(self.item_ids)) != n:
            raise ValueError("duplicate item ids")
        if self.text.shape[0] != n or self.vision.shape[0] != n:
            raise ValueError("embedding tables must have one row per item")
        if len(self.user_ids) != len(self.sequences):
            raise ValueError("one sequence per user is required")
        for seq in self.sequences:
            for i in seq:
                if not 0 <= i < n:
                    raise DanglingReferenceError([str(i)])

    @property
    def metadata(self) -> Dict[str, float]:
        lengths = [len(s) for s in self.sequences]
        n_int = sum(lengths)
        n_items, n_users = len(self.item_ids), len(self.user_ids)
        dense = n_items * n_users
        return {
            "items": n_items,
            "users": n_users,
            "interactions": n_int,
            "avg_len": (n_int / n_users) if n_users else 0.0,
            "sparsity": (1.0 - n_int / dense) if dense else 1.0,
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.item_ids == other.item_ids and self.user_ids == other.user_ids
                and self.sequences == other.sequences
                and np.array_equal(self.text, other.text) and np.array_equal(self.vision, other.vision))


# ---------------------------------------------------------------------------
# interactions file


def write_interactions(path: PathLike, user_ids: Sequence[str], sequences: Sequence[Sequence[str]]) -> None:
    lines = [f"{u}\t{','.join(seq)}\n" for u, seq in zip(user_ids, sequences)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_interactions(path: PathLike) -> Tuple[List[str], List[List[str]]]:
    users, seqs = [], []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        user, sep, rest = line.partition("\t")
        if not sep or not user:
            raise FormatError(f"{path}:{lineno}: expected user_id<TAB>item,item,...")
        seqs.append([s for s in rest.split(",") if s] if rest else [])
        users.append(user)
    return users, seqs


# ---------------------------------------------------------------------------
# directory round trip


def save_dataset(ds: Dataset, directory: PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_embeddings(d / TEXT_FILE, TEXT, ds.item_ids, ds.text)
    write_embeddings(d / VISION_FILE, VISION, ds.item_ids, ds.vision)
    write_interactions(d / INTERACTIONS_FILE, ds.user_ids, [[ds.item_ids[i] for i in s] for s in ds.sequences])
    (d / META_FILE).write_text(format_kv(ds.metadata), encoding="utf-8")


def load_dataset(directory: PathLike) -> Dataset:
    d = Path(directory)
    for name in (TEXT_FILE, VISION_FILE, INTERACTIONS_FILE):
        if not (d / name).exists():
            raise FileNotFoundError(f"{d / name} is missing")
    mod_t, ids_t, text = read_embeddings(d / TEXT_FILE)
    mod_v, ids_v, vision = read_embeddings(d / VISION_FILE)
    if mod_t != TEXT or mod_v != VISION:
        raise FormatError(f"{d}: embedding files carry modalities {mod_t}/{mod_v}")
    if ids_t != ids_v:
        raise FormatError(f"{d}: text and vision tables list different items")
    index = {item: i for i, item in enumerate(ids_t)}
    users, raw = read_interactions(d / INTERACTIONS_FILE)
    missing = sorted({it for seq in raw for it in seq if it not in index})
    if missing:
        raise DanglingReferenceError(missing)
    seqs = [[index[it] for it in seq] for seq in raw]
    return Dataset(ids_t, text, vision, users, seqs)


def save_identifiers(directory: PathLike, identifiers: Sequence[ItemIdentifier], vocab: UnifiedVocabulary) -> None:
    d = Path(directory)
    write_identifier_map(d / IDENTIFIER_FILE, identifiers, vocab)
    (d / VOCAB_FILE).write_text(format_kv({"depth": vocab.depth, "codebook_size": vocab.codebook_size,
                                           "n_suffix": vocab.n_suffix, "digest": vocab.digest()}), encoding="utf-8")


def load_identifiers(directory: PathLike, item_ids: Sequence[str]) -> Tuple[List[ItemIdentifier], UnifiedVocabulary]:
    """Identifiers ordered like ``item_ids``; every item must have one."""
    d = Path(directory)
    if not (d / VOCAB_FILE).exists():
        raise FileNotFoundError(f"{d / VOCAB_FILE} is missing; run the tokenize step first")
    kv = parse_kv((d / VOCAB_FILE).read_text(encoding="utf-8"))
    vocab = UnifiedVocabulary(int(kv["depth"]), int(kv["codebook_size"]), int(kv["n_suffix"]))
    if kv.get("digest") not in (None, vocab.digest()):
        raise FormatError(f"{d / VOCAB_FILE}: vocabulary digest mismatch")
    by_id = {ident.item_id: ident for ident in read_identifier_map(d / IDENTIFIER_FILE, vocab)}
    missing = [i for i in item_ids if i not in by_id]
    if missing:
        raise DanglingReferenceError(missing)
    return [by_id[i] for i in item_ids], vocab
