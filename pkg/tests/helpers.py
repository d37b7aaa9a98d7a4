"""Tiny trainer fixtures shared by several test modules."""

import itertools

import numpy as np

from synrec.backbone import BackboneConfig, GenerativeBackbone
from synrec.tokenizer import build_vocab
from synrec.tokenizer.vocab import TEXT, VISION
from synrec.training import TrainConfig, Trainer, token_examples


def make_items(vocab, n_items, seed=0):
    rng = np.random.default_rng(seed)
    grid = list(itertools.product(range(vocab.codebook_size), repeat=2 * vocab.depth))
    picks = rng.choice(len(grid), size=n_items, replace=False)
    items = []
    for p in picks:
        codes = grid[p]
        toks = [vocab.token_of(TEXT, d + 1, codes[d]) for d in range(vocab.depth)]
        toks += [vocab.token_of(VISION, d + 1, codes[vocab.depth + d]) for d in range(vocab.depth)]
        items.append(tuple(toks))
    return items


def make_trainer(variant="full", lam=0.5, seed=0, lr=1e-3, mask_ratio=0.5, n_items=12):
    vocab = build_vocab(2, 4)
    items = make_items(vocab, n_items)
    model = GenerativeBackbone(BackboneConfig(vocab_size=vocab.size, d_model=16, n_heads=2, head_dim=8, n_layers=1,
                                              d_ff=32, max_len=16, max_target_len=4, seed=seed))
    cfg = TrainConfig(lr=lr, lam=lam, seed=seed, variant=variant, mask_ratio=mask_ratio, batch_size=8, beam=n_items)
    return Trainer(model, vocab, items, cfg)


def batch_for(trainer, seed=0, B=6):
    rng = np.random.default_rng(seed)
    n = len(trainer.item_tokens)
    pairs = [(list(rng.integers(0, n, int(rng.integers(1, 4)))), int(rng.integers(0, n))) for _ in range(B)]
    toks = token_examples(pairs, trainer.item_tokens, trainer.model.cfg.max_len)
    return [h for h, _ in toks], [t for _, t in toks]
