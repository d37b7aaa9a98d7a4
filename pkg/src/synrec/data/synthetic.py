"""Corpus with planted cross-modal synergy.

Items come in families. Within a family every combination of a hidden text
value ``b_t`` and vision value ``b_v`` (``bits`` bits each) appears once. A text
embedding is a cluster centre for ``b_t`` plus family noise, and likewise for
vision. Each user stays inside one family. After ``window`` random opening
items, every next item draws a fresh ``b_t`` and sets ``b_v = b_t XOR p``,
where ``p`` is the XOR of ``b_t XOR b_v`` over the previous ``window`` items.

The category ``b_t XOR b_v`` of the next item therefore equals ``p``. Either
modality stream alone is independent of it (the other stream acts as a one-time
pad), while the two together determine it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .dataset import Dataset


class InfeasibleConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_items: int = 500
    emb_dim: int = 32
    n_users: int = 2000
    min_len: int = 5
    max_len: int = 9
    bits: int = 1
    window: int = 2
    sigma: float = 0.05
    center_gap: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.window < 2:
            raise ValueError(f"parity window must be >= 2, got {self.window}")
        if self.sigma < 0:
            raise ValueError(f"noise level must be >= 0, got {self.sigma}")
        if self.bits < 1:
            raise ValueError("bits per modality must be >= 1")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError(f"bad length range [{self.min_len}, {self.max_len}]")
        if self.n_users < 1 or self.emb_dim < 1:
            raise ValueError("n_users and emb_dim must be >= 1")

    @property
    def values(self) -> int:
        return 1 << self.bits

    @property
    def family_size(self) -> int:
        return self.values * self.values


def _centres(rng: np.random.Generator, n: int, dim: int, gap: float) -> np.ndarray:
    """``n`` points whose pairwise distances are all exactly ``gap``."""
    if dim < n:
        raise InfeasibleConfigError(f"emb_dim {dim} cannot hold {n} equidistant cluster centres")
    q, _ = np.linalg.qr(rng.standard_normal((dim, n)))
    return q.T * (gap / np.sqrt(2.0))


def next_bits(history: np.ndarray, rng: np.random.Generator, values: int, window: int) -> Tuple[int, int]:
    """(b_t, b_v) of the next item given ``history`` rows of (b_t, b_v)."""
    recent = history[-window:]
    p = 0
    for bt, bv in recent:
        p ^= int(bt) ^ int(bv)
    bt = int(rng.integers(values))
    return bt, bt ^ p


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Seed-deterministic corpus; ``latent`` holds (family, b_t, b_v) per item."""
    cfg = config
    Q = cfg.values
    if cfg.n_items < cfg.family_size:
        raise InfeasibleConfigError(f"{cfg.n_items} items cannot cover the {cfg.family_size} bit combinations")
    if cfg.n_items % cfg.family_size:
        raise InfeasibleConfigError(f"item count {cfg.n_items} is not a multiple of {cfg.family_size}")
    if cfg.center_gap < 6 * cfg.sigma:
        raise InfeasibleConfigError(f"centre gap {cfg.center_gap} is below 6 sigma = {6 * cfg.sigma}")
    if cfg.max_len <= cfg.window:
        raise InfeasibleConfigError("sequences must be longer than the parity window")
    n_fam = cfg.n_items // cfg.family_size
    rng = np.random.default_rng(cfg.seed)

    mu_t = _centres(rng, Q, cfg.emb_dim, cfg.center_gap)
    mu_v = _centres(rng, Q, cfg.emb_dim, cfg.center_gap)
    noise_t = rng.standard_normal((n_fam, Q, cfg.emb_dim)) * cfg.sigma
    noise_v = rng.standard_normal((n_fam, Q, cfg.emb_dim)) * cfg.sigma

    latent = np.zeros((cfg.n_items, 3), dtype=np.int64)
    text = np.zeros((cfg.n_items, cfg.emb_dim))
    vision = np.zeros((cfg.n_items, cfg.emb_dim))
    for f in range(n_fam):
        for bt in range(Q):
            for bv in range(Q):
                i = f * cfg.family_size + bt * Q + bv
                latent[i] = (f, bt, bv)
                text[i] = mu_t[bt] + noise_t[f, bt]
                vision[i] = mu_v[bv] + noise_v[f, bv]
    # persisted as float32; keep the in-memory copy identical to a reload
    text = text.astype(np.float32).astype(np.float64)
    vision = vision.astype(np.float32).astype(np.float64)

    lo = max(cfg.min_len, cfg.window + 1)
    seqs = []
    for _ in range(cfg.n_users):
        f = int(rng.integers(n_fam))
        L = int(rng.integers(lo, cfg.max_len + 1))
        bits = [(int(rng.integers(Q)), int(rng.integers(Q))) for _ in range(cfg.window)]
        while len(bits) < L:
            bits.append(next_bits(np.asarray(bits), rng, Q, cfg.window))
        seqs.append([f * cfg.family_size + bt * Q + bv for bt, bv in bits])

    width = len(str(cfg.n_items - 1))
    item_ids = [f"i{i:0{width}d}" for i in range(cfg.n_items)]
    uwidth = len(str(cfg.n_users - 1))
    user_ids = [f"u{u:0{uwidth}d}" for u in range(cfg.n_users)]
    return Dataset(item_ids, text, vision, user_ids, seqs, latent=latent)


def category(latent_row) -> int:
    _, bt, bv = latent_row
    return int(bt) ^ int(bv)
