"""Data splits, the optimisation loop, and the ablation switches."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .backbone.beam import PrefixTrie
from .backbone.transformer import GenerativeBackbone, pad_sequences
from .evaluation import EvalReport, evaluate
from .losses import (
    encode_views,
    masked_batch,
    merge_encodings,
    pool,
    synergy_contrastive,
    total_loss,
    unimodal_batch,
    view_nll,
)
from .tokenizer.vocab import TEXT, VISION, UnifiedVocabulary

logger = logging.getLogger(__name__)

VARIANTS = ("full", "wo_SM", "wo_UN", "wo_SCL")
# per-view weights of the generative loss: original and masked views appear in
# both sub-tasks, each unimodal view in one
VIEW_WEIGHTS = (2.0, 2.0, 1.0, 1.0)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    warmup_ratio: float = 0.0
    epochs: int = 200
    batch_size: int = 128
    mask_ratio: float = 0.3
    lam: float = 0.003
    tau: float = 0.07
    seed: int = 0
    variant: str = "full"
    grad_clip: float = 1.0
    patience: int = 10
    eval_every: int = 1
    eval_users: int = 0          # 0 means the whole validation split
    beam: int = 20
    log_every: int = 0           # 0 disables per-step log lines

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        for name in ("lr", "weight_decay", "warmup_ratio", "mask_ratio", "lam", "grad_clip"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.mask_ratio > 1 or self.warmup_ratio > 1:
            raise ValueError("mask_ratio and warmup_ratio must be <= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.beam < 1:
            raise ValueError("epochs, batch_size and beam must be >= 1")

    @property
    def effective_lam(self) -> float:
        return 0.0 if self.variant == "wo_SCL" else self.lam

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------------------
# leave-one-out split


@dataclass
class Split:
    train: List[List[int]]                      # per-user training prefix
    valid: List[Tuple[List[int], int]]          # (history, target)
    test: List[Tuple[List[int], int]]
    users: List[int] = field(default_factory=list)  # kept user positions
    dropped: int = 0

    def train_pairs(self) -> List[Tuple[List[int], int]]:
        """Every (prefix, next item) pair inside the training prefixes."""
        return [(seq[:i], seq[i]) for seq in self.train for i in range(1, len(seq))]


def split_leave_one_out(sequences: Sequence[Sequence[int]]) -> Split:
    """Last item for test, second-to-last for validation, the rest for training.

    Sequences shorter than three are dropped and counted.
    """
    train, valid, test, users = [], [], [], []
    dropped = 0
    for u, seq in enumerate(sequences):
        seq = list(seq)
        if len(seq) < 3:
            dropped += 1
            continue
        users.append(u)
        train.append(seq[:-2])
        valid.append((seq[:-2], seq[-2]))
        test.append((seq[:-1], seq[-1]))
    if dropped:
        logger.info("dropped %d user(s) with fewer than 3 interactions", dropped)
    return Split(train, valid, test, users, dropped)


# ---------------------------------------------------------------------------
# token-level examples


def history_tokens(items: Sequence[int], item_tokens: Sequence[Sequence[int]], max_len: int) -> List[int]:
    """Concatenated identifiers of the most recent items that fit in ``max_len`` tokens."""
    out: List[int] = []
    for it in reversed(list(items)):
        toks = list(item_tokens[it])
        if len(out) + len(toks) > max_len:
            break
        out = toks + out
    if not out and items:
        # a single identifier longer than max_len: keep its tail
        out = list(item_tokens[items[-1]])[-max_len:]
    return out


def token_examples(pairs: Sequence[Tuple[Sequence[int], int]], item_tokens, max_len: int):
    return [(history_tokens(h, item_tokens, max_len), t) for h, t in pairs]


def target_matrix(targets: Sequence[int], item_tokens) -> np.ndarray:
    out, _ = pad_sequences([item_tokens[t] for t in targets])
    return out


# ---------------------------------------------------------------------------
# trainer


@dataclass
class StepMetrics:
    step: int
    l_gen: float
    l_syn: float
    loss: float
    lr: float
    grad_norm: float
    text_density: float
    vision_density: float
    n_text_dom: int
    n_vision_dom: int

    def log_line(self) -> str:
        return (f"step={self.step} L_gen={self.l_gen:.5f} L_syn={self.l_syn:.5f} L={self.loss:.5f} "
                f"lt={self.text_density:.5f} lv={self.vision_density:.5f} "
                f"dom=text:{self.n_text_dom},vision:{self.n_vision_dom}")


CURVE_COLUMNS = ("step", "l_gen", "l_syn", "loss", "lr", "grad_norm", "text_density", "vision_density")


@dataclass
class FitResult:
    curves: List[StepMetrics]
    valid_history: List[Tuple[int, float]]
    best_epoch: int
    best_valid: float
    stopped_early: bool

    def write_curves(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for m in self.curves:
                w.writerow([m.step] + [repr(float(getattr(m, c))) for c in CURVE_COLUMNS[1:]])


class Trainer:
    def __init__(self, model: GenerativeBackbone, vocab: UnifiedVocabulary, item_tokens: Sequence[Sequence[int]],
                 config: TrainConfig, dump_dir: Optional[Union[str, Path]] = None):
        if model.cfg.vocab_size != vocab.size:
            raise ValueError(f"model vocabulary {model.cfg.vocab_size} != tokenizer vocabulary {vocab.size}")
        self.model = model
        self.vocab = vocab
        self.item_tokens = [tuple(t) for t in item_tokens]
        self.config = config
        self.dump_dir = dump_dir
        self.rng = np.random.default_rng(config.seed)
        self.opt = T.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        self.step_count = 0
        self.total_steps = 1
        self.trie = PrefixTrie(self.item_tokens)

    # -- one optimisation step --------------------------------------------
    def train_step(self, histories: Sequence[Sequence[int]], targets: Sequence[int]) -> StepMetrics:
        """One AdamW step on the combined loss for a batch of token histories."""
        cfg, model, vocab = self.config, self.model, self.vocab
        model.train()
        ids, _ = pad_sequences(histories, model.cfg.max_len)
        Y = target_matrix(targets, self.item_tokens)
        B = len(ids)

        enc_o = model.encode(ids)
        mask_rng = self.rng if cfg.variant == "wo_SM" else None
        masked, lt, lv, dom = masked_batch(ids, enc_o.maps, enc_o.pad_mask, vocab, cfg.mask_ratio, mask_rng)
        uni_t = unimodal_batch(ids, vocab, TEXT)
        uni_v = unimodal_batch(ids, vocab, VISION)
        enc = merge_encodings([enc_o, encode_views(model, [masked, uni_t, uni_v])])

        Y4 = np.concatenate([Y, Y, Y, Y])
        hidden, logits = model.teacher_forced(Y4, enc)
        weights = np.repeat(np.asarray(VIEW_WEIGHTS), B)
        l_gen = view_nll(logits, Y4, weights, B)

        lam = cfg.effective_lam
        if lam > 0:
            l_syn = self._synergy(hidden, Y4, B)
            loss = total_loss(l_gen, l_syn, lam)
        else:
            with T.no_grad():
                l_syn = self._synergy(T.Tensor(hidden.data), Y4, B)
            loss = l_gen
        lval = float(loss.data)
        if not math.isfinite(lval):
            self._dump(ids, Y, l_gen, l_syn)
        self.opt.zero_grad()
        loss.backward()
        gnorm = T.clip_grad_norm(self.opt.params, cfg.grad_clip) if cfg.grad_clip > 0 else T.parameters_grad_norm(self.opt.params)
        lr = T.warmup_constant(self.step_count, self.total_steps, cfg.warmup_ratio, cfg.lr)
        self.opt.step(lr)
        self.step_count += 1
        m = StepMetrics(self.step_count, float(l_gen.data), float(l_syn.data), lval, lr, gnorm,
                        float(lt.mean()), float(lv.mean()), dom.count(TEXT), dom.count(VISION))
        if cfg.log_every and self.step_count % cfg.log_every == 0:
            logger.info(m.log_line())
        return m

    def _synergy(self, hidden, Y4: np.ndarray, B: int):
        Z = pool(hidden, Y4)
        z_o, z_m, z_t, z_v = Z[0:B], Z[B:2 * B], Z[2 * B:3 * B], Z[3 * B:4 * B]
        if self.config.variant == "wo_UN":
            # negatives are other users' holistic representations
            z_t = z_o[self._rolled(B)]
            z_v = z_o[self._rolled(B)]
        tau = self.config.tau
        return synergy_contrastive(z_m, z_o, z_t, tau) + synergy_contrastive(z_m, z_o, z_v, tau)

    def _rolled(self, B: int) -> np.ndarray:
        shift = int(self.rng.integers(1, B)) if B > 1 else 0
        return np.roll(np.arange(B), shift)

    def _dump(self, ids, Y, l_gen, l_syn) -> None:
        msg = (f"non-finite loss at step {self.step_count}: L_gen={float(l_gen.data)!r} "
               f"L_syn={float(l_syn.data)!r}")
        if self.dump_dir is not None:
            path = Path(self.dump_dir) / f"nonfinite_step{self.step_count}.npz"
            np.savez(path, histories=ids, targets=Y, **{f"param/{k}": v for k, v in self.model.state_dict().items()})
            msg += f"; batch and parameters dumped to {path}"
        raise NonFiniteLossError(msg)

    # -- loop -------------------------------------------------------------
    def fit(self, split: Split, epochs: Optional[int] = None) -> FitResult:
        cfg = self.config
        epochs = cfg.epochs if epochs is None else epochs
        max_len = self.model.cfg.max_len
        pairs = token_examples(split.train_pairs(), self.item_tokens, max_len)
        if not pairs:
            raise ValueError("no training pairs (every training prefix has a single item)")
        valid = token_examples(split.valid, self.item_tokens, max_len)
        if cfg.eval_users:
            valid = valid[: cfg.eval_users]
        n_batches = math.ceil(len(pairs) / cfg.batch_size)
        self.total_steps = epochs * n_batches

        curves: List[StepMetrics] = []
        history: List[Tuple[int, float]] = []
        best, best_epoch, best_state, waited = -1.0, 0, self.model.state_dict(), 0
        stopped = False
        for epoch in range(1, epochs + 1):
            order = self.rng.permutation(len(pairs))
            for b in range(n_batches):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                curves.append(self.train_step([pairs[i][0] for i in idx], [pairs[i][1] for i in idx]))
            if valid and (epoch % cfg.eval_every == 0 or epoch == epochs):
                score = evaluate(self.model, valid, self.trie, cfg.beam).get("ndcg@10")
                history.append((epoch, score))
                logger.info("epoch %d valid NDCG@10 %.5f", epoch, score)
                if score > best:
                    best, best_epoch, best_state, waited = score, epoch, self.model.state_dict(), 0
                else:
                    waited += 1
                    if waited >= cfg.patience:
                        stopped = True
                        break
        if valid:
            self.model.load_state_dict(best_state)
        else:
            best_epoch = epochs
        return FitResult(curves, history, best_epoch, best, stopped)

    def evaluate(self, examples: Sequence[Tuple[Sequence[int], int]], view: Optional[str] = None) -> EvalReport:
        toks = token_examples(examples, self.item_tokens, self.model.cfg.max_len)
        return evaluate(self.model, toks, self.trie, self.config.beam, view=view, vocab=self.vocab)


def train_step(trainer: Trainer, batch: Tuple[Sequence[Sequence[int]], Sequence[int]]) -> StepMetrics:
    histories, targets = batch
    return trainer.train_step(histories, targets)


__all__ = [
    "CURVE_COLUMNS",
    "FitResult",
    "NonFiniteLossError",
    "Split",
    "StepMetrics",
    "TrainConfig",
    "Trainer",
    "VARIANTS",
    "history_tokens",
    "split_leave_one_out",
    "target_matrix",
    "token_examples",
    "train_step",
]
