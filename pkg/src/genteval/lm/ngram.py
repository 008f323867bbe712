"""Count-based n-gram language model with add-k smoothing and backoff.

The conditional for a context of length order-1 is

    p(w | ctx) = (count(ctx + w) + k_s) / (count(ctx) + k_s * |V|)

where count(ctx) is the number of continuations observed after ctx (so
the unsmoothed conditionals are exact relative frequencies). With
k_s > 0 the formula is defined for every context; an entirely unseen
context yields the uniform distribution. With k_s = 0 an unseen context
would be 0/0, so the model backs off to the shortened context (dropping
the leftmost token) until it finds one with observations; the unigram
level always qualifies on non-empty training data.
"""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from ..corpus import TokenSequence, Vocab
from ..errors import BadOrder, ConfigError, EmptyInput
from .base import as_ids


class NGramLM:
    backend = "ngram"

    def __init__(
        self,
        vocab: Vocab,
        order: int,
        k_s: float,
        counts: dict[int, dict[tuple[int, ...], int]],
    ) -> None:
        if order < 1:
            raise BadOrder("n-gram order must be at least 1")
        if k_s < 0:
            raise ConfigError("smoothing constant must be non-negative")
        self.vocab = vocab
        self.order = order
        self.k_s = float(k_s)
        self.counts = {o: dict(counts.get(o, {})) for o in range(1, order + 1)}
        counts = self.counts
        # Continuation totals per context; the unigram context is ().
        self.ctx_totals: dict[int, dict[tuple[int, ...], int]] = {}
        for o, table in counts.items():
            totals: dict[tuple[int, ...], int] = {}
            for gram, c in table.items():
                ctx = gram[:-1]
                totals[ctx] = totals.get(ctx, 0) + c
            self.ctx_totals[o] = totals
        if self.ctx_totals.get(1, {}).get((), 0) == 0:
            raise EmptyInput("n-gram model fitted on no tokens")

    def _level(self, context: tuple[int, ...]) -> tuple[int, tuple[int, ...], int]:
        """Pick the order to answer from: longest usable context."""
        ctx = context[max(0, len(context) - (self.order - 1)) :] if self.order > 1 else ()
        for o in range(min(self.order, len(ctx) + 1), 0, -1):
            c = ctx[len(ctx) - (o - 1) :] if o > 1 else ()
            total = self.ctx_totals[o].get(c, 0)
            if total > 0 or self.k_s > 0 or o == 1:
                return o, c, total
        raise AssertionError("unreachable: unigram level always answers")

    def token_prob(self, token: int, context: Sequence[int]) -> float:
        o, ctx, total = self._level(tuple(context))
        c = self.counts[o].get(ctx + (token,), 0)
        denom = total + self.k_s * self.vocab.size
        return (c + self.k_s) / denom if denom > 0 else 0.0

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        o, ctx, total = self._level(as_ids(context))
        v = self.vocab.size
        dist = np.zeros(v)
        denom = total + self.k_s * v
        if denom == 0:
            return dist  # k_s = 0 with an empty unigram table cannot happen
        for w in range(v):
            c = self.counts[o].get(ctx + (w,), 0)
            if c or self.k_s:
                dist[w] = (c + self.k_s) / denom
        return dist

    def score(self, seq, context: Sequence[int] = ()) -> float:
        ids = as_ids(seq)
        ctx = list(as_ids(context))
        total = 0.0
        for tok in ids:
            p = self.token_prob(tok, tuple(ctx))
            if p <= 0.0:
                return -np.inf
            total += np.log(p)
            ctx.append(tok)
        return float(total)


def ngram_fit(
    corpus: TokenSequence | Iterable[TokenSequence],
    order: int,
    k_s: float = 1.0,
    vocab: Vocab | None = None,
) -> NGramLM:
    """Count n-grams of orders 1..order over one or more sequences.

    Windows never span sequence boundaries. The vocab defaults to the
    vocab of the first sequence; pass one explicitly when fitting on raw
    generated ids.
    """
    if order < 1:
        raise BadOrder("n-gram order must be at least 1")
    if isinstance(corpus, TokenSequence):
        corpus = [corpus]
    sequences = list(corpus)
    if not sequences:
        raise EmptyInput("no training sequences")
    if vocab is None:
        vocab = sequences[0].vocab
    counts: dict[int, dict[tuple[int, ...], int]] = {
        o: Counter() for o in range(1, order + 1)
    }
    for seq in sequences:
        ids = as_ids(seq)
        for o in range(1, order + 1):
            table = counts[o]
            for i in range(len(ids) - o + 1):
                table[ids[i : i + o]] += 1
    return NGramLM(vocab, order, k_s, {o: dict(t) for o, t in counts.items()})
