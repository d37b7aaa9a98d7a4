"""Per-item semantic identifiers built from the two modality quantizers."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .rqvae import RqVaeModel, UntrainedModelError
from .vocab import TEXT, VISION, UnifiedVocabulary


@dataclass(frozen=True)
class ItemIdentifier:
    item_id: str
    text_codes: Tuple[int, ...]
    vision_codes: Tuple[int, ...]
    tokens: Tuple[int, ...]
    suffix: Optional[int] = None

    def token_string(self, vocab: UnifiedVocabulary) -> str:
        return " ".join(vocab.name(t) for t in self.tokens)


def _check_model(model: RqVaeModel, vocab: UnifiedVocabulary, modality: str) -> None:
    if model.stack is None:
        raise UntrainedModelError(f"{modality} quantizer is untrained")
    if model.stack.depth != vocab.depth or model.stack.size != vocab.codebook_size:
        raise ValueError(
            f"{modality} quantizer has D={model.stack.depth}, K={model.stack.size}; "
            f"vocabulary expects D={vocab.depth}, K={vocab.codebook_size}"
        )


def identifier_tokens(text_codes, vision_codes, vocab: UnifiedVocabulary, suffix: Optional[int] = None) -> Tuple[int, ...]:
    toks = [vocab.token_of(TEXT, d + 1, int(c)) for d, c in enumerate(text_codes)]
    toks += [vocab.token_of(VISION, d + 1, int(c)) for d, c in enumerate(vision_codes)]
    if suffix is not None:
        toks.append(vocab.suffix_token(suffix))
    return tuple(toks)


def tokenize_item(item_id, text_emb, vision_emb, text_model: RqVaeModel, vision_model: RqVaeModel,
                  vocab: UnifiedVocabulary) -> ItemIdentifier:
    _check_model(text_model, vocab, TEXT)
    _check_model(vision_model, vocab, VISION)
    tc = tuple(int(c) for c in text_model.codes(np.atleast_2d(text_emb))[0])
    vc = tuple(int(c) for c in vision_model.codes(np.atleast_2d(vision_emb))[0])
    return ItemIdentifier(str(item_id), tc, vc, identifier_tokens(tc, vc, vocab))


def tokenize_items(item_ids: Sequence[str], text_embs: np.ndarray, vision_embs: np.ndarray,
                   text_model: RqVaeModel, vision_model: RqVaeModel,
                   vocab: UnifiedVocabulary) -> Tuple[List[ItemIdentifier], UnifiedVocabulary]:
    """Tokenize a catalogue, appending a suffix token to items whose codes collide.

    The returned vocabulary carries a suffix block as large as the biggest
    collision group (empty when every identifier is already unique).
    """
    _check_model(text_model, vocab, TEXT)
    _check_model(vision_model, vocab, VISION)
    tcodes = text_model.codes(text_embs)
    vcodes = vision_model.codes(vision_embs)
    groups: Dict[Tuple[int, ...], List[int]] = defaultdict(list)
    for i in range(len(item_ids)):
        groups[tuple(tcodes[i]) + tuple(vcodes[i])].append(i)
    n_suffix = max((len(g) for g in groups.values() if len(g) > 1), default=0)
    vocab = vocab.with_suffix(n_suffix)

    suffix_of: Dict[int, int] = {}
    for members in groups.values():
        if len(members) > 1:
            for s, i in enumerate(members):
                suffix_of[i] = s
    out = []
    for i, item in enumerate(item_ids):
        tc = tuple(int(c) for c in tcodes[i])
        vc = tuple(int(c) for c in vcodes[i])
        sfx = suffix_of.get(i)
        out.append(ItemIdentifier(str(item), tc, vc, identifier_tokens(tc, vc, vocab, sfx), sfx))
    return out, vocab


def decode_identifier(tokens: Sequence[int], vocab: UnifiedVocabulary) -> List[Tuple[str, int, int]]:
    """(modality, depth, code) for every code token; suffix tokens are skipped."""
    return [vocab.decode(t) for t in tokens if not vocab.is_special(t)]


# -- identifier map file: ``item_id<TAB>tok1 tok2 ...`` -------------------------


def write_identifier_map(path: Union[str, Path], identifiers: Sequence[ItemIdentifier], vocab: UnifiedVocabulary) -> None:
    lines = [f"{ident.item_id}\t{ident.token_string(vocab)}\n" for ident in identifiers]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_identifier_map(path: Union[str, Path], vocab: UnifiedVocabulary) -> List[ItemIdentifier]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        item_id, sep, rest = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected item_id<TAB>tokens")
        toks = tuple(vocab.parse(name) for name in rest.split())
        mods = vocab.modality_ids(toks)
        tc = tuple(vocab.decode(t)[2] for t, m in zip(toks, mods) if m == 0)
        vc = tuple(vocab.decode(t)[2] for t, m in zip(toks, mods) if m == 1)
        sfx = [t - vocab.suffix_start for t in toks if t >= vocab.suffix_start]
        out.append(ItemIdentifier(item_id, tc, vc, toks, sfx[0] if sfx else None))
    return out
