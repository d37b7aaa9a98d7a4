"""Performance-based decomposition into redundant, unique and synergistic shares."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .backbone.transformer import GenerativeBackbone, pad_sequences
from .saliency import saliency_scores
from .tokenizer.vocab import MOD_TEXT, MOD_VISION, TEXT, VISION

PID_COLUMNS = ("run_id", "metric", "P_t", "P_v", "P_j", "S", "R", "U_t", "U_v", "flags")
SHARE_COLUMNS = ("dataset", "text_share", "vision_share", "sequences")
SUB_ADDITIVE = "sub_additive"


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class PidReport:
    P_t: float
    P_v: float
    P_j: float
    S: float
    R: float
    U_t: float
    U_v: float
    flags: Tuple[str, ...] = ()

    @property
    def total(self) -> float:
        return self.S + self.R + self.U_t + self.U_v

    def row(self, run_id: str, metric: str) -> List[str]:
        vals = [self.P_t, self.P_v, self.P_j, self.S, self.R, self.U_t, self.U_v]
        return [run_id, metric] + [repr(float(v)) for v in vals] + [";".join(self.flags)]


def normalized_pid(P_t: float, P_v: float, P_j: float) -> PidReport:
    """Split joint performance into synergy, redundancy and the two unique parts.

    Every component is divided by ``P_j``. When the joint score falls below the
    better unimodal score, synergy is zero and the report carries a
    sub-additivity flag instead of being renormalised.
    """
    P_t, P_v, P_j = float(P_t), float(P_v), float(P_j)
    if not P_j > 0:
        raise DecompositionError(f"joint performance must be positive, got {P_j}")
    if P_t < 0 or P_v < 0:
        raise DecompositionError(f"unimodal performances must be non-negative, got {P_t}, {P_v}")
    hi, lo = max(P_t, P_v), min(P_t, P_v)
    S = max(0.0, P_j - hi) / P_j
    R = lo / P_j
    U_t = (P_t - lo) / P_j
    U_v = (P_v - lo) / P_j
    flags = (SUB_ADDITIVE,) if P_j < hi else ()
    return PidReport(P_t, P_v, P_j, S, R, U_t, U_v, flags)


def write_pid_csv(path: Union[str, Path], rows: Iterable[Tuple[str, str, PidReport]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PID_COLUMNS)
        for run_id, metric, rep in rows:
            w.writerow(rep.row(run_id, metric))


def audit_model(trainer, examples: Sequence[Tuple[Sequence[int], int]], metric: str = "ndcg@10") -> PidReport:
    """Evaluate text-only, vision-only and bimodal inputs, then decompose.

    ``trainer`` supplies the model, vocabulary and item trie (a
    :class:`~synrec.training.Trainer`); ``examples`` are item-level
    ``(history, target)`` pairs such as a test split.
    """
    from .evaluation import EvalReport

    EvalReport.from_ranks([], 1).get(metric)  # reject unknown metric names up front
    P_t = trainer.evaluate(examples, view=TEXT).get(metric)
    P_v = trainer.evaluate(examples, view=VISION).get(metric)
    P_j = trainer.evaluate(examples).get(metric)
    return normalized_pid(P_t, P_v, P_j)


# ---------------------------------------------------------------------------
# modality attention share


def modality_shares(scores: np.ndarray, modality_ids: np.ndarray) -> Tuple[float, float]:
    """Attention mass received by each modality, normalised over the two modalities.

    A sequence lacking one modality gives everything to the other.
    """
    s = np.asarray(scores, dtype=np.float64)
    m = np.asarray(modality_ids)
    t = float(s[m == MOD_TEXT].sum())
    v = float(s[m == MOD_VISION].sum())
    has_t, has_v = bool((m == MOD_TEXT).any()), bool((m == MOD_VISION).any())
    if has_t and not has_v:
        return 1.0, 0.0
    if has_v and not has_t:
        return 0.0, 1.0
    if t + v <= 0:
        return 0.5, 0.5
    return t / (t + v), v / (t + v)


def attention_share(model: GenerativeBackbone, vocab, histories: Sequence[Sequence[int]],
                    batch_size: int = 256) -> Tuple[float, float, np.ndarray]:
    """Mean (text, vision) attention share over ``histories`` plus the per-sequence shares."""
    per: List[Tuple[float, float]] = []
    was_training = model.training
    model.eval()
    try:
        for start in range(0, len(histories), batch_size):
            chunk = [np.asarray(h, dtype=np.int64) for h in histories[start:start + batch_size]]
            ids, _ = pad_sequences(chunk, model.cfg.max_len)
            with T.no_grad():
                enc = model.encode(ids)
            scores = saliency_scores(enc.maps, enc.pad_mask)
            mods = vocab.modality_ids(ids)
            for b in range(len(ids)):
                live = ~enc.pad_mask[b]
                per.append(modality_shares(scores[b][live], mods[b][live]))
    finally:
        model.train(was_training)
    arr = np.asarray(per, dtype=np.float64).reshape(-1, 2)
    if len(arr) == 0:
        return 0.0, 0.0, arr
    mean = arr.mean(axis=0)
    return float(mean[0]), float(mean[1]), arr


def write_share_csv(path: Union[str, Path], rows: Iterable[Tuple[str, float, float, int]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SHARE_COLUMNS)
        for name, t, v, n in rows:
            w.writerow([name, repr(float(t)), repr(float(v)), int(n)])
