"""Shared token vocabulary for text and vision codes.

Ids are laid out as four specials, then text codes in (depth, code) order, then
vision codes in the same order, then an optional block of collision suffixes.
Text tokens print with a lowercase depth letter (``a_5`` is depth 1, code 5),
vision tokens with the uppercase letter (``A_5``).
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

TEXT = "text"
VISION = "vision"
MODALITIES = (TEXT, VISION)

PAD, BOS, EOS, MASK = 0, 1, 2, 3
N_SPECIAL = 4
SPECIAL_NAMES = ("<pad>", "<bos>", "<eos>", "<mask>")

# modality codes returned by ``modality_ids``
MOD_TEXT, MOD_VISION, MOD_OTHER = 0, 1, -1


@dataclass(frozen=True)
class UnifiedVocabulary:
    depth: int
    codebook_size: int
    n_suffix: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.codebook_size < 1:
            raise ValueError(f"depth and codebook size must be >= 1, got D={self.depth}, K={self.codebook_size}")
        if self.depth > len(string.ascii_lowercase):
            raise ValueError("at most 26 quantization levels can be named")

    @property
    def block(self) -> int:
        return self.depth * self.codebook_size

    @property
    def text_start(self) -> int:
        return N_SPECIAL

    @property
    def vision_start(self) -> int:
        return N_SPECIAL + self.block

    @property
    def suffix_start(self) -> int:
        return N_SPECIAL + 2 * self.block

    @property
    def size(self) -> int:
        return N_SPECIAL + 2 * self.block + self.n_suffix

    def __len__(self) -> int:
        return self.size

    def with_suffix(self, n_suffix: int) -> "UnifiedVocabulary":
        return UnifiedVocabulary(self.depth, self.codebook_size, n_suffix)

    def token_of(self, modality: str, depth: int, code: int) -> int:
        if not 1 <= depth <= self.depth:
            raise ValueError(f"depth {depth} outside 1..{self.depth}")
        if not 0 <= code < self.codebook_size:
            raise ValueError(f"code {code} outside 0..{self.codebook_size - 1}")
        if modality == TEXT:
            start = self.text_start
        elif modality == VISION:
            start = self.vision_start
        else:
            raise ValueError(f"unknown modality {modality!r}")
        return start + (depth - 1) * self.codebook_size + code

    def suffix_token(self, index: int) -> int:
        if not 0 <= index < self.n_suffix:
            raise ValueError(f"suffix {index} outside 0..{self.n_suffix - 1}")
        return self.suffix_start + index

    def decode(self, token: int) -> Tuple[str, int, int]:
        """Inverse of ``token_of`` for code tokens."""
        token = int(token)
        if self.text_start <= token < self.vision_start:
            off, modality = token - self.text_start, TEXT
        elif self.vision_start <= token < self.suffix_start:
            off, modality = token - self.vision_start, VISION
        else:
            raise ValueError(f"token {token} is not a modality code token")
        return modality, off // self.codebook_size + 1, off % self.codebook_size

    def is_special(self, token: int) -> bool:
        return token < N_SPECIAL or token >= self.suffix_start

    def modality_ids(self, tokens) -> np.ndarray:
        """Per-token modality code: 0 text, 1 vision, -1 anything else."""
        t = np.asarray(tokens)
        out = np.full(t.shape, MOD_OTHER, dtype=np.int64)
        out[(t >= self.text_start) & (t < self.vision_start)] = MOD_TEXT
        out[(t >= self.vision_start) & (t < self.suffix_start)] = MOD_VISION
        return out

    def name(self, token: int) -> str:
        token = int(token)
        if 0 <= token < N_SPECIAL:
            return SPECIAL_NAMES[token]
        if token >= self.suffix_start:
            if token >= self.size:
                raise ValueError(f"token {token} outside vocabulary of size {self.size}")
            return f"#{token - self.suffix_start}"
        modality, depth, code = self.decode(token)
        letter = string.ascii_lowercase[depth - 1]
        return f"{letter if modality == TEXT else letter.upper()}_{code}"

    def parse(self, name: str) -> int:
        if name in SPECIAL_NAMES:
            return SPECIAL_NAMES.index(name)
        if name.startswith("#"):
            return self.suffix_token(int(name[1:]))
        letter, _, code = name.partition("_")
        if len(letter) != 1 or not letter.isalpha() or not code.isdigit():
            raise ValueError(f"malformed token name {name!r}")
        modality = TEXT if letter.islower() else VISION
        return self.token_of(modality, string.ascii_lowercase.index(letter.lower()) + 1, int(code))

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.depth},{self.codebook_size},{self.n_suffix}".encode())
        for t in range(self.size):
            h.update(self.name(t).encode())
            h.update(b"\0")
        return h.hexdigest()[:16]


def build_vocab(depth: int, codebook_size: int, n_suffix: int = 0) -> UnifiedVocabulary:
    return UnifiedVocabulary(depth, codebook_size, n_suffix)


def modality_block(vocab: UnifiedVocabulary, modality: Optional[str]) -> Tuple[int, int]:
    """Half-open id range of one modality's code tokens."""
    if modality == TEXT:
        return vocab.text_start, vocab.vision_start
    if modality == VISION:
        return vocab.vision_start, vocab.suffix_start
    raise ValueError(f"unknown modality {modality!r}")
