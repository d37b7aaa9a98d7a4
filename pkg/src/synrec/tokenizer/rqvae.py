"""Residual vector quantization and a small RQ-VAE trained with EMA codebooks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .. import tensor as T
from ..tensor import Linear, Module, Tensor
from .vocab import MODALITIES

logger = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class CodebookStack:
    """``codebooks[level, k]`` is codeword k of quantization level ``level + 1``."""

    modality: str
    codebooks: np.ndarray

    def __post_init__(self):
        self.codebooks = np.asarray(self.codebooks, dtype=np.float64)
        if self.codebooks.ndim != 3:
            raise ValueError(f"codebooks must have shape (D, K, d), got {self.codebooks.shape}")
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if not np.all(np.isfinite(self.codebooks)):
            raise ValueError("codebook contains non-finite values")

    @property
    def depth(self) -> int:
        return self.codebooks.shape[0]

    @property
    def size(self) -> int:
        return self.codebooks.shape[1]

    @property
    def dim(self) -> int:
        return self.codebooks.shape[2]


def _nearest(r: np.ndarray, book: np.ndarray) -> np.ndarray:
    # exact squared distances; argmin keeps the lowest index on ties
    d2 = ((r[:, None, :] - book[None, :, :]) ** 2).sum(axis=-1)
    return d2.argmin(axis=1)


def quantize_batch(Z: np.ndarray, stack: CodebookStack, chunk: int = 4096) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quantize rows of ``Z``.

    Returns ``(codes, final_residual, residuals)`` where ``codes`` is ``(N, D)`` and
    ``residuals[:, l]`` is the residual entering level ``l + 1`` (so
    ``residuals[:, 0] == Z``).
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != stack.dim:
        raise T.ShapeError(f"latent shape {Z.shape} does not match codeword dim {stack.dim}")
    N = Z.shape[0]
    codes = np.empty((N, stack.depth), dtype=np.int64)
    residuals = np.empty((N, stack.depth, stack.dim))
    r = Z.copy()
    for level in range(stack.depth):
        residuals[:, level] = r
        book = stack.codebooks[level]
        for s in range(0, N, chunk):
            codes[s : s + chunk, level] = _nearest(r[s : s + chunk], book)
        r = r - book[codes[:, level]]
    return codes, r, residuals


def quantize(z, stack: CodebookStack) -> Tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise T.ShapeError(f"quantize expects a single latent vector, got shape {z.shape}")
    codes, r, _ = quantize_batch(z[None, :], stack)
    return codes[0], r[0]


def kmeans(X: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm from a k-means++ start; tolerates duplicate points."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        j = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[i] = X[j]
        d2 = np.minimum(d2, ((X - centers[i]) ** 2).sum(axis=1))
    for _ in range(iters):
        assign = _nearest(X, centers)
        for c in range(k):
            members = X[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return centers


@dataclass
class RQConfig:
    depth: int = 3
    codebook_size: int = 256
    latent_dim: int = 32
    hidden_dim: int = 64
    beta: float = 0.25
    ema_decay: float = 0.99
    epochs: int = 60
    batch_size: int = 256
    lr: float = 1e-3
    kmeans_iters: int = 10
    warmup_rows: int = 2048
    identity_init: bool = False
    seed: int = 0


class RqVaeModel(Module):
    def __init__(self, emb_dim: int, config: RQConfig, modality: str, rng: np.random.Generator):
        self.emb_dim = emb_dim
        self.config = config
        self.modality = modality
        d, h = config.latent_dim, config.hidden_dim
        self.enc1 = Linear(emb_dim, h, rng)
        self.enc2 = Linear(h, d, rng)
        self.dec1 = Linear(d, h, rng)
        self.dec2 = Linear(h, emb_dim, rng)
        if config.identity_init:
            if d != emb_dim or h != 2 * emb_dim:
                raise ValueError("identity init needs latent_dim == emb_dim and hidden_dim == 2 * emb_dim")
            eye = np.eye(emb_dim)
            for first, second in ((self.enc1, self.enc2), (self.dec1, self.dec2)):
                # relu(x) - relu(-x) == x
                first.weight.data = np.hstack([eye, -eye])
                second.weight.data = np.vstack([eye, -eye])
        self.stack: Optional[CodebookStack] = None
        self.recon_history: List[float] = []
        self.usage: Optional[np.ndarray] = None

    def encode_tensor(self, x) -> Tensor:
        return self.enc2(T.relu(self.enc1(x)))

    def decode_tensor(self, z) -> Tensor:
        return self.dec2(T.relu(self.dec1(z)))

    def encode(self, X: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.encode_tensor(Tensor(np.atleast_2d(X))).data

    def codes(self, X: np.ndarray) -> np.ndarray:
        if self.stack is None:
            raise UntrainedModelError("RQ-VAE has no codebooks; train it first")
        return quantize_batch(self.encode(X), self.stack)[0]

    def reconstruct(self, X: np.ndarray, levels: Optional[int] = None) -> np.ndarray:
        if self.stack is None:
            raise UntrainedModelError("RQ-VAE has no codebooks; train it first")
        Z = self.encode(X)
        codes, _, _ = quantize_batch(Z, self.stack)
        levels = self.stack.depth if levels is None else levels
        zq = sum(self.stack.codebooks[l][codes[:, l]] for l in range(levels))
        with T.no_grad():
            return self.decode_tensor(Tensor(zq)).data

    def reconstruction_error(self, X: np.ndarray, levels: Optional[int] = None) -> float:
        X = np.atleast_2d(X)
        return float(((self.reconstruct(X, levels) - X) ** 2).sum(axis=1).mean())


def _init_codebooks(model: RqVaeModel, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cfg = model.config
    rows = X[rng.permutation(len(X))[: cfg.warmup_rows]]
    r = model.encode(rows)
    books = np.empty((cfg.depth, cfg.codebook_size, cfg.latent_dim))
    for level in range(cfg.depth):
        books[level] = kmeans(r, cfg.codebook_size, cfg.kmeans_iters, rng)
        r = r - books[level][_nearest(r, books[level])]
    return books


def train_rqvae(embeddings: np.ndarray, config: RQConfig, modality: str) -> RqVaeModel:
    """Fit an RQ-VAE to item embeddings.

    Loss is reconstruction MSE plus ``beta`` times the commitment of each level's
    residual to its selected codeword; gradients reach the encoder through a
    straight-through estimator while codewords follow EMA updates. Codes unused
    for a whole epoch are reseeded from residuals observed at that level.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError(f"embeddings must be a non-empty 2-D table, got shape {X.shape}")
    N = X.shape[0]
    K, D = config.codebook_size, config.depth
    if N < K:
        raise InsufficientDataError(f"need at least K={K} items to train the quantizer, got {N}")

    rng = np.random.default_rng(config.seed)
    model = RqVaeModel(X.shape[1], config, modality, rng)
    books = _init_codebooks(model, X, rng)
    model.stack = CodebookStack(modality, books)
    ema_n = np.ones((D, K))
    ema_sum = books.copy()
    opt = T.AdamW(model.parameters(), lr=config.lr)
    decay = config.ema_decay

    model.recon_history = [model.reconstruction_error(X)]
    usage = np.zeros((D, K), dtype=np.int64)
    for epoch in range(config.epochs):
        usage = np.zeros((D, K), dtype=np.int64)
        seen = [[] for _ in range(D)]
        order = rng.permutation(N)
        for s in range(0, N, config.batch_size):
            xb = X[order[s : s + config.batch_size]]
            z = model.encode_tensor(Tensor(xb))
            codes, _, residuals = quantize_batch(z.data, model.stack)
            chosen = np.stack([books[l][codes[:, l]] for l in range(D)], axis=1)
            zq = chosen.sum(axis=1)

            z_st = z + Tensor(zq - z.data)
            recon = model.decode_tensor(z_st)
            loss = T.mean(T.tsum(T.square(recon - Tensor(xb)), axis=1))
            commit = None
            for l in range(D):
                # residual entering level l is z minus the codewords above it
                target = Tensor(chosen[:, : l + 1].sum(axis=1))
                term = T.mean(T.tsum(T.square(z - target), axis=1))
                commit = term if commit is None else commit + term
            loss = loss + config.beta * commit
            opt.zero_grad()
            loss.backward()
            opt.step()

            for l in range(D):
                onehot = np.zeros((len(xb), K))
                onehot[np.arange(len(xb)), codes[:, l]] = 1.0
                counts = onehot.sum(axis=0)
                usage[l] += counts.astype(np.int64)
                ema_n[l] = decay * ema_n[l] + (1 - decay) * counts
                ema_sum[l] = decay * ema_sum[l] + (1 - decay) * (onehot.T @ residuals[:, l])
                total = ema_n[l].sum()
                smoothed = (ema_n[l] + 1e-5) / (total + K * 1e-5) * total
                books[l] = ema_sum[l] / smoothed[:, None]
                seen[l].append(residuals[:, l])
            model.stack = CodebookStack(modality, books)

        for l in range(D):
            dead = np.flatnonzero(usage[l] == 0)
            if len(dead):
                pool = np.concatenate(seen[l])
                books[l][dead] = pool[rng.integers(len(pool), size=len(dead))]
                ema_sum[l][dead] = books[l][dead]
                ema_n[l][dead] = 1.0
        model.stack = CodebookStack(modality, books)
        model.recon_history.append(model.reconstruction_error(X))
        logger.debug("rqvae %s epoch %d recon %.6f", modality, epoch, model.recon_history[-1])

    model.usage = usage
    return model
