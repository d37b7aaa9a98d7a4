"""Prefix-trie constrained beam search over item identifiers."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import tensor as T
from ..tokenizer.vocab import BOS
from .transformer import EncoderOutput, GenerativeBackbone, pad_sequences, sequence_log_probs


class _Node:
    __slots__ = ("children", "item", "tokens")

    def __init__(self):
        self.children: Dict[int, "_Node"] = {}
        self.item: Optional[int] = None
        self.tokens: Optional[np.ndarray] = None  # cached sorted child ids


_OFF_TRIE = _Node()
_OFF_TRIE.tokens = np.zeros(0, dtype=np.int64)


class PrefixTrie:
    """Trie of valid identifiers; leaf ``item`` is the index into ``sequences``."""

    def __init__(self, sequences: Sequence[Sequence[int]]):
        if not sequences:
            raise ValueError("cannot build a trie over zero identifiers")
        self.root = _Node()
        self.sequences = [tuple(int(t) for t in s) for s in sequences]
        for idx, seq in enumerate(self.sequences):
            node = self.root
            for tok in seq:
                if node.item is not None:
                    raise ValueError(f"identifier {seq} extends identifier of item {node.item}")
                node = node.children.setdefault(tok, _Node())
            if node.children:
                raise ValueError(f"identifier {seq} is a prefix of another identifier")
            if node.item is not None:
                raise ValueError(f"identifier {seq} is shared by items {node.item} and {idx}")
            node.item = idx
        self._freeze(self.root)
        self.max_len = max(len(s) for s in self.sequences)

    def _freeze(self, node: _Node) -> None:
        stack = [node]
        while stack:
            n = stack.pop()
            n.tokens = np.array(sorted(n.children), dtype=np.int64)
            stack.extend(n.children.values())

    def __len__(self) -> int:
        return len(self.sequences)

    def lookup(self, tokens: Sequence[int]) -> Optional[int]:
        node = self.root
        for t in tokens:
            node = node.children.get(int(t))
            if node is None:
                return None
        return node.item

    def allowed(self, prefix: Sequence[int]) -> List[int]:
        node = self.root
        for t in prefix:
            node = node.children.get(int(t))
            if node is None:
                return []
        return node.tokens.tolist()


@dataclass(frozen=True)
class BeamResult:
    item: int
    tokens: Tuple[int, ...]
    log_prob: float


def _order(h) -> Tuple[float, Tuple[int, ...]]:
    return (-h[0], h[1])


def _nested_select(children: List[List[Tuple[float, Tuple[int, ...], Any]]], beam: int):
    """Fill slot ``b`` with the best unchosen child of the first ``b`` parents.

    ``children[p]`` holds parent ``p``'s expansions, parents in slot order. The
    width-``B-1`` beam is then a prefix of the width-``B`` beam at every step,
    so the best finished score can only improve as the width grows.
    """
    for c in children:
        c.sort(key=_order)
    heap: List[Tuple[Tuple[float, Tuple[int, ...]], int, int]] = []
    chosen = []
    for b in range(beam):
        if b < len(children) and children[b]:
            heapq.heappush(heap, (_order(children[b][0]), b, 0))
        if not heap:
            break
        _, p, i = heapq.heappop(heap)
        chosen.append(children[p][i])
        if i + 1 < len(children[p]):
            heapq.heappush(heap, (_order(children[p][i + 1]), p, i + 1))
    return chosen


def beam_search_batch(model: GenerativeBackbone, enc: EncoderOutput, trie: PrefixTrie, beam: int = 20,
                      constrained: bool = True) -> List[List[BeamResult]]:
    """Beam search for every history in ``enc``.

    Hypotheses are scored by summed log-softmax over the full vocabulary. With
    ``constrained`` only trie continuations are expanded; otherwise every
    non-special token is, and only outputs that land on an identifier are
    reported.
    """
    if beam < 1:
        raise ValueError("beam size must be >= 1")
    U = enc.hidden.shape[0]
    V = model.cfg.vocab_size
    all_tokens = np.arange(4, V, dtype=np.int64)
    # per user: list of (score, tokens, node); _OFF_TRIE marks an unconstrained path that left the trie
    pools: List[List[Tuple[float, Tuple[int, ...], Any]]] = [[(0.0, (), trie.root)] for _ in range(U)]
    for _ in range(trie.max_len):
        live = [(u, h) for u in range(U) for h in pools[u] if h[2].item is None]
        if not live:
            break
        width = len(live[0][1][1]) + 1
        dec_in = np.full((len(live), width), BOS, dtype=np.int64)
        for r, (_, h) in enumerate(live):
            dec_in[r, 1:] = h[1]
        rows = np.array([u for u, _ in live])
        sub = EncoderOutput(T.Tensor(enc.hidden.data[rows]), enc.maps[:0], enc.pad_mask[rows], enc.truncated[rows])
        with T.no_grad():
            logits = model.logits(model.decode(dec_in, sub)).data[:, -1, :]
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

        # each hypothesis, in slot order, contributes its expansions; a finished one carries itself over
        expansions: List[List[List]] = [[[h] if h[2].item is not None else [] for h in pools[u]] for u in range(U)]
        slot = {}
        for u in range(U):
            for j, h in enumerate(pools[u]):
                slot[id(h)] = j
        for r, (u, h) in enumerate(live):
            score, toks, node = h
            cand = node.tokens if constrained else all_tokens
            if len(cand) > beam:
                part = np.argpartition(-logp[r, cand], beam - 1)[:beam]
                cand = cand[np.sort(part)]
            out = expansions[u][slot[id(h)]]
            for tok in cand.tolist():
                out.append((score + float(logp[r, tok]), toks + (tok,), node.children.get(tok, _OFF_TRIE)))
        pools = [_nested_select(expansions[u], beam) for u in range(U)]

    results = []
    for pool in pools:
        done = sorted((h for h in pool if h[2].item is not None), key=_order)
        results.append([BeamResult(h[2].item, h[1], h[0]) for h in done])
    return results


def beam_search(model: GenerativeBackbone, history_tokens: Sequence[int], trie: PrefixTrie, beam: int = 20,
                constrained: bool = True) -> List[BeamResult]:
    """Ranked identifiers (best first) for one history."""
    ids, _ = pad_sequences([history_tokens], model.cfg.max_len)
    with T.no_grad():
        enc = model.encode(ids)
    return beam_search_batch(model, enc, trie, beam, constrained)[0]


def exhaustive_scores(model: GenerativeBackbone, history_tokens: Sequence[int], trie: PrefixTrie) -> np.ndarray:
    """Log-probability of every identifier in the trie, by full enumeration."""
    ids, _ = pad_sequences([history_tokens], model.cfg.max_len)
    with T.no_grad():
        enc = model.encode(ids)
    n = len(trie.sequences)
    targets, _ = pad_sequences(trie.sequences)
    rep = np.zeros(n, dtype=np.int64)
    sub = EncoderOutput(T.Tensor(enc.hidden.data[rep]), enc.maps[rep], enc.pad_mask[rep], enc.truncated[rep])
    return sequence_log_probs(model, sub, targets)
