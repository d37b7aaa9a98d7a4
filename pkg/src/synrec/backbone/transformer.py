"""Pre-norm encoder-decoder transformer over the unified item vocabulary."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, Tuple

import numpy as np

from .. import tensor as T
from ..tensor import Embedding, LayerNorm, Linear, Module, Tensor
from ..tokenizer.vocab import BOS, PAD

logger = logging.getLogger(__name__)

NEG_INF = -1e30


class ContractError(ValueError):
    pass


@dataclass
class BackboneConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 6
    # per-head width is independent of d_model, as in T5; None means d_model // n_heads
    head_dim: Optional[int] = 16
    n_layers: int = 4
    d_ff: int = 256
    max_len: int = 64
    max_target_len: int = 16
    dropout: float = 0.0
    use_positions: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.head_dim is None:
            if self.d_model % self.n_heads:
                raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}; set head_dim")
            self.head_dim = self.d_model // self.n_heads
        if min(self.vocab_size, self.d_model, self.n_heads, self.head_dim, self.n_layers, self.d_ff, self.max_len) < 1:
            raise ValueError(f"invalid backbone config {self}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in known:
                continue
            kw[k] = v
        return cls(**kw)


@dataclass
class EncoderOutput:
    hidden: Tensor            # (B, N, d)
    maps: np.ndarray          # (B, H, N, N) final-layer attention, post-softmax
    pad_mask: np.ndarray      # (B, N), True at padding
    truncated: np.ndarray     # (B,), True where the history was cut to max_len

    def select(self, rows) -> "EncoderOutput":
        rows = np.asarray(rows)
        return EncoderOutput(Tensor(self.hidden.data[rows]), self.maps[rows], self.pad_mask[rows], self.truncated[rows])


def pad_sequences(seqs: Sequence[Sequence[int]], max_len: Optional[int] = None, width: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad token lists, keeping only the most recent ``max_len`` tokens."""
    truncated = np.zeros(len(seqs), dtype=bool)
    rows = []
    for i, s in enumerate(seqs):
        s = list(s)
        if max_len is not None and len(s) > max_len:
            s = s[-max_len:]
            truncated[i] = True
        rows.append(s)
    n = max([len(r) for r in rows] + [1, width or 0])
    out = np.full((len(rows), n), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out, truncated


class Attention(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, cross: bool):
        inner = cfg.n_heads * cfg.head_dim
        self.n_heads, self.head_dim, self.cross = cfg.n_heads, cfg.head_dim, cross
        if cross:
            self.q = Linear(cfg.d_model, inner, rng, bias=False)
            self.kv = Linear(cfg.d_model, 2 * inner, rng, bias=False)
        else:
            self.qkv = Linear(cfg.d_model, 3 * inner, rng, bias=False)
        self.o = Linear(inner, cfg.d_model, rng)

    def _heads(self, x: Tensor, n: int, parts: int) -> Tensor:
        B, N = x.shape[0], x.shape[1]
        # (B, N, parts*H*hd) -> (parts, B, H, N, hd)
        return x.reshape(B, N, parts, self.n_heads, self.head_dim).transpose(2, 0, 3, 1, 4)

    def __call__(self, x: Tensor, memory: Optional[Tensor], mask: np.ndarray) -> Tuple[Tensor, np.ndarray]:
        """``mask`` broadcasts to (B, H, Nq, Nk) and is True where attention is forbidden."""
        B, Nq = x.shape[0], x.shape[1]
        if self.cross:
            q = self._heads(self.q(x), Nq, 1)[0]
            kv = self._heads(self.kv(memory), memory.shape[1], 2)
            k, v = kv[0], kv[1]
        else:
            qkv = self._heads(self.qkv(x), Nq, 3)
            q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(self.head_dim))
        scores = T.masked_fill(scores, mask, NEG_INF)
        probs = T.softmax(scores, axis=-1)
        out = T.matmul(probs, v).transpose(0, 2, 1, 3).reshape(B, Nq, self.n_heads * self.head_dim)
        return self.o(out), probs.data


class FeedForward(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.up = Linear(cfg.d_model, cfg.d_ff, rng)
        self.down = Linear(cfg.d_ff, cfg.d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.relu(self.up(x)))


class EncoderLayer(Module):
    def __init__(self, cfg, rng):
        self.ln1 = LayerNorm(cfg.d_model)
        self.attn = Attention(cfg, rng, cross=False)
        self.ln2 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg, rng)

    def __call__(self, x, mask, drop):
        a, maps = self.attn(self.ln1(x), None, mask)
        x = x + drop(a)
        x = x + drop(self.ff(self.ln2(x)))
        return x, maps


class DecoderLayer(Module):
    def __init__(self, cfg, rng):
        self.ln1 = LayerNorm(cfg.d_model)
        self.self_attn = Attention(cfg, rng, cross=False)
        self.ln2 = LayerNorm(cfg.d_model)
        self.cross_attn = Attention(cfg, rng, cross=True)
        self.ln3 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg, rng)

    def __call__(self, y, memory, self_mask, cross_mask, drop):
        a, _ = self.self_attn(self.ln1(y), None, self_mask)
        y = y + drop(a)
        c, _ = self.cross_attn(self.ln2(y), memory, cross_mask)
        y = y + drop(c)
        y = y + drop(self.ff(self.ln3(y)))
        return y


class GenerativeBackbone(Module):
    """Shared-parameter seq2seq model; every input view runs through the same weights."""

    def __init__(self, cfg: BackboneConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.embed = Embedding(cfg.vocab_size, cfg.d_model, rng)
        self.enc_pos = Embedding(cfg.max_len, cfg.d_model, rng)
        self.dec_pos = Embedding(cfg.max_target_len + 1, cfg.d_model, rng)
        self.encoder = [EncoderLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.enc_norm = LayerNorm(cfg.d_model)
        self.decoder = [DecoderLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.dec_norm = LayerNorm(cfg.d_model)
        self.head = Linear(cfg.d_model, cfg.vocab_size, rng)
        self.dropout_rng = np.random.default_rng(cfg.seed + 7919)

    def _drop(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.cfg.dropout, self.dropout_rng, self.training)

    # -- encoder ------------------------------------------------------------
    def encode(self, tokens, pad_mask: Optional[np.ndarray] = None) -> EncoderOutput:
        """Encode one sequence ``(N,)`` or a right-padded batch ``(B, N)``.

        Histories longer than ``max_len`` keep their most recent tokens and are
        flagged in ``truncated``. A 1-D input yields batch size 1.
        """
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
            if pad_mask is not None:
                pad_mask = np.asarray(pad_mask, dtype=bool)[None, :]
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise ContractError(f"token id outside vocabulary of size {self.cfg.vocab_size}")
        if pad_mask is None:
            pad_mask = ids == PAD
        truncated = np.zeros(ids.shape[0], dtype=bool)
        if ids.shape[1] > self.cfg.max_len:
            rows = [r[~m] for r, m in zip(ids, pad_mask)]
            ids, truncated = pad_sequences(rows, self.cfg.max_len)
            pad_mask = ids == PAD
            if truncated.any():
                logger.warning("truncated %d histories to %d tokens", int(truncated.sum()), self.cfg.max_len)
        B, N = ids.shape
        x = self.embed(ids)
        if self.cfg.use_positions:
            x = x + self.enc_pos(np.arange(N))
        x = self._drop(x)
        mask = pad_mask[:, None, None, :]
        maps = None
        for layer in self.encoder:
            x, maps = layer(x, mask, self._drop)
        return EncoderOutput(self.enc_norm(x), maps, pad_mask, truncated)

    # -- decoder ------------------------------------------------------------
    def decode(self, dec_in, enc: EncoderOutput) -> Tensor:
        """Final-layer decoder hidden states ``(B, T, d)`` for input ids ``(B, T)``."""
        y_ids = np.asarray(dec_in, dtype=np.int64)
        if y_ids.ndim != 2 or y_ids.shape[1] < 1:
            raise ContractError("decoder input must be a non-empty (B, T) array")
        B, Tn = y_ids.shape
        if Tn > self.cfg.max_target_len + 1:
            raise ContractError(f"decoder input length {Tn} exceeds {self.cfg.max_target_len + 1}")
        y = self.embed(y_ids)
        if self.cfg.use_positions:
            y = y + self.dec_pos(np.arange(Tn))
        y = self._drop(y)
        causal = np.triu(np.ones((Tn, Tn), dtype=bool), k=1)[None, None]
        cross = enc.pad_mask[:, None, None, :]
        for layer in self.decoder:
            y = layer(y, enc.hidden, causal, cross, self._drop)
        return self.dec_norm(y)

    def logits(self, hidden: Tensor) -> Tensor:
        return self.head(hidden)

    def teacher_forced(self, targets, enc: EncoderOutput) -> Tuple[Tensor, Tensor]:
        """(hidden, logits) when predicting ``targets`` (B, T) right-padded with PAD."""
        tgt = np.asarray(targets, dtype=np.int64)
        dec_in = np.concatenate([np.full((tgt.shape[0], 1), BOS), tgt[:, :-1]], axis=1)
        hidden = self.decode(dec_in, enc)
        return hidden, self.logits(hidden)

    def decode_step(self, prefix, enc: EncoderOutput) -> np.ndarray:
        """Next-token logits after ``prefix`` (which must start with BOS)."""
        p = np.asarray(prefix, dtype=np.int64)
        if p.ndim == 1:
            p = p[None, :]
        if p.shape[1] == 0:
            raise ContractError("empty decoder prefix; it must start with BOS")
        if np.any(p[:, 0] != BOS):
            raise ContractError("decoder prefix must start with BOS")
        with T.no_grad():
            out = self.logits(self.decode(p, enc)).data[:, -1, :]
        return out[0] if np.asarray(prefix).ndim == 1 else out


def sequence_log_probs(model: GenerativeBackbone, enc: EncoderOutput, targets: np.ndarray) -> np.ndarray:
    """Summed log-probability of each right-padded target row (PAD ignored)."""
    tgt = np.asarray(targets, dtype=np.int64)
    with T.no_grad():
        _, logits = model.teacher_forced(tgt, enc)
        lp = T.log_softmax(logits, axis=-1).data
    picked = np.take_along_axis(lp, tgt[..., None], axis=-1)[..., 0]
    return np.where(tgt != PAD, picked, 0.0).sum(axis=1)
