"""Tripartite views, mask-aware pooling, and the training objective.

Each example is seen through three inputs that share one target identifier:
the original history (positive), a saliency-masked copy (anchor), and a
single-modality copy (negative). The contrastive term pulls the anchor's pooled
decoder state towards the positive and away from the negative; the generative
term is the teacher-forced NLL of the target under every view.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .backbone.transformer import ContractError, EncoderOutput, GenerativeBackbone, pad_sequences
from .saliency import apply_mask, profile, saliency_scores
from .tensor import Tensor
from .tokenizer.vocab import MOD_TEXT, MOD_VISION, N_SPECIAL, PAD, TEXT, VISION, UnifiedVocabulary, modality_block

logger = logging.getLogger(__name__)

XI = 1e-7


@dataclass
class ViewTriplet:
    """Token views of one history (1-D) or a right-padded batch of histories (2-D)."""

    ori: np.ndarray
    mask: np.ndarray
    uni: np.ndarray
    modality: str


def unimodal_view(tokens: Sequence[int], vocab: UnifiedVocabulary, modality: str) -> np.ndarray:
    """Keep only ``modality`` code tokens and non-pad specials; drop the rest."""
    t = np.asarray(tokens, dtype=np.int64)
    mods = vocab.modality_ids(t)
    want = MOD_TEXT if modality == TEXT else MOD_VISION
    if modality not in (TEXT, VISION):
        raise ValueError(f"unknown modality {modality!r}")
    keep = (mods == want) | ((t > PAD) & (t < N_SPECIAL))
    return t[keep]


def build_triplet(tokens: Sequence[int], maps: np.ndarray, vocab: UnifiedVocabulary, modality: str,
                  ratio: float, rng: Optional[np.random.Generator] = None) -> ViewTriplet:
    """Views of one unpadded history given its final-layer attention ``maps`` (M, N, N)."""
    t = np.asarray(tokens, dtype=np.int64)
    prof = profile(saliency_scores(maps), vocab.modality_ids(t))
    masked = apply_mask(t, prof, ratio, rng)
    return ViewTriplet(t, masked.tokens, unimodal_view(t, vocab, modality), modality)


# ---------------------------------------------------------------------------
# pooling and similarity


def pool(hidden: Tensor, targets, xi: float = XI) -> Tensor:
    """Mean of decoder states over non-pad target positions.

    ``hidden`` is ``(..., N, d)`` and ``targets`` ``(..., N)``. The denominator
    carries ``xi`` so an all-pad row pools to the zero vector.
    """
    hidden = T.as_tensor(hidden)
    tgt = np.asarray(targets)
    if hidden.shape[:-1] != tgt.shape:
        raise T.ShapeError(f"hidden {hidden.shape} and targets {tgt.shape} disagree")
    m = (tgt != PAD).astype(np.float64)
    num = (hidden * m[..., None]).sum(axis=-2)
    den = m.sum(axis=-1) + xi
    return num / den[..., None]


def cosine(a: Tensor, b: Tensor, xi: float = XI) -> Tensor:
    """Cosine similarity over the last axis, finite (and differentiable) at zero norm."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    dot = (a * b).sum(axis=-1)
    norms = T.sqrt((a * a).sum(axis=-1) * (b * b).sum(axis=-1) + xi * xi)
    return dot / norms


def zero_norm(*vectors, xi: float = XI) -> np.ndarray:
    """Rows where any of the given vectors has norm below ``xi``."""
    bad = None
    for v in vectors:
        n = np.linalg.norm(np.atleast_2d(T.as_tensor(v).data), axis=-1) < xi
        bad = n if bad is None else bad | n
    return bad


def synergy_contrastive(z_mask, z_ori, z_uni, tau: float = 0.07) -> Tensor:
    """Two-way softmax loss of the anchor picking the positive over the negative.

    Equals ``-log(e^{s_o/tau} / (e^{s_o/tau} + e^{s_u/tau}))``, evaluated as
    ``softplus((s_u - s_o) / tau)``. Batched inputs ``(B, d)`` give the batch mean.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    bad = zero_norm(z_mask, z_ori, z_uni)
    if bad.any():
        logger.warning("synergy loss: %d row(s) with a zero-norm pooled vector", int(bad.sum()))
    s_o = cosine(z_mask, z_ori)
    s_u = cosine(z_mask, z_uni)
    per = T.softplus((s_u - s_o) * (1.0 / tau))
    return per.mean() if per.ndim else per


# ---------------------------------------------------------------------------
# generative term


def check_target(Y, vocab: Optional[UnifiedVocabulary] = None, modality: Optional[str] = None) -> np.ndarray:
    """Validate an identifier target (right-padded with PAD when batched).

    Specials other than padding are rejected. With ``modality`` every token must
    lie in that modality's block.
    """
    y = np.atleast_2d(np.asarray(Y, dtype=np.int64))
    live = y != PAD
    if not live.any(axis=1).all():
        raise ContractError("empty target identifier")
    # padding must be a suffix
    if (np.diff(live.astype(np.int8), axis=1) > 0).any():
        raise ContractError("target has PAD before an identifier token")
    if (live & (y < N_SPECIAL)).any():
        raise ContractError("target contains a special token")
    if vocab is not None:
        if (y >= vocab.size).any():
            raise ContractError(f"target token outside vocabulary of size {vocab.size}")
        if modality is not None:
            lo, hi = modality_block(vocab, modality)
            if (live & ((y < lo) | (y >= hi))).any():
                raise ContractError(f"target contains tokens outside the {modality} block")
    return y


def encode_views(model: GenerativeBackbone, views: Sequence[np.ndarray]) -> EncoderOutput:
    """One encoder call over several right-padded view batches stacked row-wise."""
    width = max(v.shape[1] for v in views)
    ids = np.concatenate([np.pad(v, ((0, 0), (0, width - v.shape[1])), constant_values=PAD) for v in views])
    return model.encode(ids)


def merge_encodings(encs: Sequence[EncoderOutput]) -> EncoderOutput:
    """Stack encoder outputs row-wise, padding the sequence axis (gradients preserved)."""
    width = max(e.hidden.shape[1] for e in encs)
    hs, pads, trunc = [], [], []
    for e in encs:
        extra = width - e.hidden.shape[1]
        h = e.hidden
        pm = e.pad_mask
        if extra:
            B, _, d = h.shape
            h = T.concat([h, T.Tensor(np.zeros((B, extra, d)))], axis=1)
            pm = np.concatenate([pm, np.ones((B, extra), dtype=bool)], axis=1)
        hs.append(h)
        pads.append(pm)
        trunc.append(e.truncated)
    return EncoderOutput(T.concat(hs, axis=0), None, np.concatenate(pads), np.concatenate(trunc))


def view_nll(logits: Tensor, targets: np.ndarray, weights: np.ndarray, n_examples: int) -> Tensor:
    """Weighted teacher-forced NLL summed over tokens and rows, divided by ``n_examples``."""
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64)[:, None], targets.shape)
    return T.cross_entropy(logits, targets, ignore_id=PAD, reduction="sum", weights=w) * (1.0 / n_examples)


def multiview_gen_loss(model: GenerativeBackbone, triplet: ViewTriplet, Y, vocab: Optional[UnifiedVocabulary] = None,
                       restrict_target: bool = False) -> Tensor:
    """Sum over the three views of the teacher-forced NLL of ``Y``.

    Token NLLs are summed within an identifier and averaged over the batch.
    ``restrict_target`` demands that ``Y`` only use the triplet modality's block.
    """
    y = check_target(Y, vocab, triplet.modality if restrict_target else None)
    views = [np.atleast_2d(np.asarray(v, dtype=np.int64)) for v in (triplet.ori, triplet.mask, triplet.uni)]
    B = views[0].shape[0]
    if any(v.shape[0] != B for v in views) or y.shape[0] != B:
        raise ContractError("views and target disagree on batch size")
    enc = encode_views(model, views)
    targets = np.concatenate([y, y, y])
    _, logits = model.teacher_forced(targets, enc)
    return view_nll(logits, targets, np.ones(3 * B), B)


def total_loss(l_gen, l_syn, lam: float):
    if lam < 0:
        raise ValueError(f"loss weight must be >= 0, got {lam}")
    return l_gen + lam * l_syn


# ---------------------------------------------------------------------------
# batched view construction used by training


def masked_batch(ids: np.ndarray, maps: np.ndarray, pad_mask: np.ndarray, vocab: UnifiedVocabulary, ratio: float,
                 rng: Optional[np.random.Generator] = None):
    """Saliency-masked copy of a padded batch plus per-row diagnostics.

    Returns ``(masked_ids, text_density, vision_density, dominant)``.
    """
    scores = saliency_scores(maps, pad_mask)
    mods = vocab.modality_ids(ids)
    out = ids.copy()
    lt = np.zeros(len(ids))
    lv = np.zeros(len(ids))
    dom = []
    for b in range(len(ids)):
        prof = profile(scores[b], mods[b])
        out[b] = apply_mask(ids[b], prof, ratio, rng).tokens
        lt[b], lv[b] = prof.text_density, prof.vision_density
        dom.append(prof.dominant)
    return out, lt, lv, dom


def unimodal_batch(ids: np.ndarray, vocab: UnifiedVocabulary, modality: str) -> np.ndarray:
    rows = [unimodal_view(r, vocab, modality) for r in ids]
    out, _ = pad_sequences(rows)
    return out


__all__ = [
    "XI",
    "ViewTriplet",
    "build_triplet",
    "check_target",
    "cosine",
    "encode_views",
    "masked_batch",
    "merge_encodings",
    "multiview_gen_loss",
    "pool",
    "synergy_contrastive",
    "total_loss",
    "unimodal_batch",
    "unimodal_view",
    "view_nll",
    "zero_norm",
]
