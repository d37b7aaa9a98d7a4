"""Attention-based modality diagnosis and dominant-modality masking."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .tokenizer.vocab import MASK, TEXT, VISION

# remove float noise such as 0.1 * 3 = 0.30000000000000004 before taking the ceiling
_ROUND = 9


class DiagnosisError(ValueError):
    pass


@dataclass
class SaliencyProfile:
    scores: np.ndarray
    text_density: float
    vision_density: float
    dominant: str
    text_idx: np.ndarray
    vision_idx: np.ndarray

    def dominant_idx(self) -> np.ndarray:
        return self.text_idx if self.dominant == TEXT else self.vision_idx


@dataclass
class MaskedView:
    tokens: np.ndarray
    masked: np.ndarray
    ratio: float


def saliency_scores(maps: np.ndarray, pad_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Received attention mass per token, averaged over heads and non-pad queries.

    ``maps`` is ``(M, N, N)`` (or batched ``(B, M, N, N)``) with row ``j`` holding
    query ``j``'s attention over keys. Pad query rows are dropped and the
    normaliser uses the non-pad length, so a padded sequence scores exactly as
    its unpadded counterpart and the scores sum to one.
    """
    A = np.asarray(maps, dtype=np.float64)
    batched = A.ndim == 4
    if not batched:
        A = A[None]
        pad_mask = None if pad_mask is None else np.asarray(pad_mask, dtype=bool)[None]
    B, M, N, _ = A.shape
    if pad_mask is None:
        pad_mask = np.zeros((B, N), dtype=bool)
    pad_mask = np.asarray(pad_mask, dtype=bool)
    live = (~pad_mask).astype(np.float64)
    n_live = np.maximum(live.sum(axis=1), 1.0)
    mass = np.einsum("bmji,bj->bi", A, live)
    scores = mass / (M * n_live)[:, None]
    scores[pad_mask] = 0.0
    return scores if batched else scores[0]


def dominant_modality(scores, text_idx, vision_idx) -> Tuple[float, float, str]:
    """Mean saliency per modality and the dominant one (text wins exact ties)."""
    text_idx = np.asarray(text_idx, dtype=np.int64)
    vision_idx = np.asarray(vision_idx, dtype=np.int64)
    if text_idx.size == 0 or vision_idx.size == 0:
        raise DiagnosisError("both modalities need at least one token to diagnose dominance")
    s = np.asarray(scores, dtype=np.float64)
    lt = float(s[text_idx].mean())
    lv = float(s[vision_idx].mean())
    return lt, lv, (TEXT if lt >= lv else VISION)


def profile(scores, modality_ids) -> SaliencyProfile:
    """Build a profile from per-token scores and modality codes (0 text, 1 vision, -1 other)."""
    mods = np.asarray(modality_ids)
    text_idx = np.flatnonzero(mods == 0)
    vision_idx = np.flatnonzero(mods == 1)
    lt, lv, dom = dominant_modality(scores, text_idx, vision_idx)
    return SaliencyProfile(np.asarray(scores, dtype=np.float64), lt, lv, dom, text_idx, vision_idx)


def mask_count(ratio: float, n: int) -> int:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio {ratio} outside [0, 1]")
    return min(n, math.ceil(round(ratio * n, _ROUND)))


def top_salient(scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` highest-scoring candidate positions; lower position wins ties."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if k <= 0:
        return candidates[:0]
    order = np.lexsort((candidates, -np.asarray(scores)[candidates]))
    return np.sort(candidates[order[:k]])


def apply_mask(tokens, prof: SaliencyProfile, ratio: float, rng: Optional[np.random.Generator] = None) -> MaskedView:
    """Replace the top ``ceil(ratio * |dominant|)`` dominant-modality tokens by MASK.

    With ``rng`` the same number of dominant-modality positions is chosen at
    random instead (the random-masking ablation).
    """
    toks = np.array(tokens, dtype=np.int64, copy=True)
    dom = prof.dominant_idx()
    k = mask_count(ratio, len(dom))
    if rng is None:
        chosen = top_salient(prof.scores, dom, k)
    else:
        chosen = np.sort(rng.choice(dom, size=k, replace=False)) if k else dom[:0]
    toks[chosen] = MASK
    return MaskedView(toks, chosen, ratio)


DIAG_COLUMNS = ("dataset", "step", "text_density", "vision_density", "dominant")


def write_diagnostics(path: Union[str, Path], rows: Iterable[Sequence]) -> None:
    """CSV dump of per-step modality densities."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAG_COLUMNS)
        for dataset, step, lt, lv, dom in rows:
            w.writerow([dataset, step, repr(float(lt)), repr(float(lv)), dom])
