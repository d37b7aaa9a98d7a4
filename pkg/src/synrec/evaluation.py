"""Leave-one-out ranking metrics and beam-search evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .backbone.beam import PrefixTrie, beam_search_batch
from .backbone.transformer import GenerativeBackbone, pad_sequences
from .losses import unimodal_view
from .tokenizer.vocab import UnifiedVocabulary

KS = (1, 5, 10)
NDCG_KS = (5, 10)
METRIC_COLUMNS = ("metric", "name", "value")


def hit_rate(ranks, k: int) -> float:
    """Fraction of users whose ground truth sits at rank ``<= k`` (rank 0 means absent)."""
    r = np.asarray(ranks, dtype=np.int64)
    if r.size == 0:
        return 0.0
    return float(np.mean((r >= 1) & (r <= k)))


def ndcg(ranks, k: int) -> float:
    """Mean of ``1/log2(rank+1)`` over users with rank in ``1..k``, zero otherwise."""
    r = np.asarray(ranks, dtype=np.int64)
    if r.size == 0:
        return 0.0
    hit = (r >= 1) & (r <= k)
    gains = np.zeros(r.shape)
    gains[hit] = 1.0 / np.log2(r[hit] + 1.0)
    return float(gains.mean())


@dataclass
class EvalReport:
    hr: Dict[int, float]
    ndcg: Dict[int, float]
    ranks: np.ndarray
    beam: int
    extra: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_ranks(cls, ranks, beam: int, ks: Sequence[int] = KS, ndcg_ks: Sequence[int] = NDCG_KS) -> "EvalReport":
        r = np.asarray(ranks, dtype=np.int64)
        return cls({k: hit_rate(r, k) for k in ks}, {k: ndcg(r, k) for k in ndcg_ks}, r, beam)

    def get(self, name: str) -> float:
        """Look up ``hr@K`` or ``ndcg@K`` (case-insensitive); other K are computed from ranks."""
        kind, sep, k = name.lower().partition("@")
        if not sep or not k.isdigit() or kind not in ("hr", "recall", "ndcg"):
            raise KeyError(f"unknown metric {name!r}; expected hr@K or ndcg@K")
        k = int(k)
        if kind == "ndcg":
            return self.ndcg[k] if k in self.ndcg else ndcg(self.ranks, k)
        return self.hr[k] if k in self.hr else hit_rate(self.ranks, k)

    def rows(self) -> List[Tuple[str, str, str]]:
        out = [("hr", f"HR@{k}", repr(v)) for k, v in sorted(self.hr.items())]
        out += [("ndcg", f"NDCG@{k}", repr(v)) for k, v in sorted(self.ndcg.items())]
        out.append(("beam", "B", str(self.beam)))
        out.append(("users", "N", str(len(self.ranks))))
        out += [("extra", k, repr(v)) for k, v in sorted(self.extra.items())]
        return out

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            w.writerows(self.rows())

    def table(self) -> str:
        names = [f"HR@{k}" for k in sorted(self.hr)] + [f"NDCG@{k}" for k in sorted(self.ndcg)]
        vals = [self.hr[k] for k in sorted(self.hr)] + [self.ndcg[k] for k in sorted(self.ndcg)]
        width = max(len(n) for n in names)
        lines = [f"{n:<{width}}  {v:.4f}" for n, v in zip(names, vals)]
        lines.append(f"{'users':<{width}}  {len(self.ranks)}")
        lines.append(f"{'beam':<{width}}  {self.beam}")
        return "\n".join(lines)


def ranks_from_beams(beams, targets: Sequence[int]) -> np.ndarray:
    out = np.zeros(len(targets), dtype=np.int64)
    for u, (res, tgt) in enumerate(zip(beams, targets)):
        for pos, hyp in enumerate(res, 1):
            if hyp.item == tgt:
                out[u] = pos
                break
    return out


def evaluate(model: GenerativeBackbone, examples: Sequence[Tuple[Sequence[int], int]], trie: PrefixTrie,
             beam: int = 20, batch_size: int = 256, view: Optional[str] = None,
             vocab: Optional[UnifiedVocabulary] = None) -> EvalReport:
    """Rank each ground-truth item in the beam output for its history.

    ``examples`` holds ``(history_tokens, target_item_index)`` pairs. With
    ``view`` set to a modality the other modality's tokens are dropped first.
    """
    if view is not None and vocab is None:
        raise ValueError("a unimodal view needs the vocabulary")
    was_training = model.training
    model.eval()
    ranks = []
    try:
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            hists = [np.asarray(h, dtype=np.int64) for h, _ in chunk]
            if view is not None:
                hists = [unimodal_view(h, vocab, view) for h in hists]
            ids, _ = pad_sequences(hists, model.cfg.max_len)
            with T.no_grad():
                enc = model.encode(ids)
            beams = beam_search_batch(model, enc, trie, beam)
            ranks.append(ranks_from_beams(beams, [t for _, t in chunk]))
    finally:
        model.train(was_training)
    r = np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)
    return EvalReport.from_ranks(r, beam)


def exhaustive_ranks(score_rows: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Full-ranking ranks from a (users, items) score matrix; ties favour lower item index."""
    s = np.asarray(score_rows, dtype=np.float64)
    out = np.zeros(len(targets), dtype=np.int64)
    for u, t in enumerate(targets):
        better = (s[u] > s[u, t]).sum() + (s[u, :t] == s[u, t]).sum()
        out[u] = int(better) + 1
    return out

