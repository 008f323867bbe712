"""Language model contract plus scoring utilities shared by all backends.

A language model is anything with a ``vocab`` attribute, a
``next_dist(context)`` returning a probability vector over the vocab
(summing to 1 within 1e-9), and a ``score(seq, context)`` returning the
summed natural log-probability of ``seq`` given ``context``. Only the
tokens of ``seq`` contribute to the score; the context conditions but is
never scored. Fitted models are immutable: concurrent read-only scoring
is safe, training is single-writer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..corpus import TokenSequence, Vocab
from .. import decode


class LanguageModel(Protocol):
    vocab: Vocab

    def next_dist(self, context: Sequence[int]) -> np.ndarray: ...

    def score(self, seq, context: Sequence[int] = ()) -> float: ...


def as_ids(seq) -> tuple[int, ...]:
    """Accept a TokenSequence or any id sequence (possibly empty)."""
    if seq is None:
        return ()
    if isinstance(seq, TokenSequence):
        return seq.ids
    return tuple(int(i) for i in seq)


def perplexity(model, seq, context: Sequence[int] = ()) -> float:
    """exp of mean per-token negative log-likelihood of ``seq``.

    A zero-probability token makes the result +inf rather than raising;
    degenerate inputs are a data condition, not a crash.
    """
    ids = as_ids(seq)
    if not ids:
        raise ValueError("cannot take perplexity of an empty sequence")
    logprob = model.score(ids, as_ids(context))
    if not math.isfinite(logprob):
        return math.inf
    return math.exp(-logprob / len(ids))


@dataclass(frozen=True)
class TraceEntry:
    token: int
    prob: float
    truncated_prob: float


@dataclass(frozen=True)
class ProbTrace:
    """Per-position probabilities a model assigns to a fixed sequence."""

    entries: tuple[TraceEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def token_prob_trace(
    model,
    seq,
    truncation: tuple[str, float] | None = None,
    context: Sequence[int] = (),
) -> ProbTrace:
    """Trace raw and truncated probabilities of each token of ``seq``.

    ``truncation`` is None or a ("topk"|"topp", value) pair applied via
    :func:`genteval.decode.truncate_renormalize`; a token dropped by the
    truncation reports a truncated probability of 0.
    """
    ids = as_ids(seq)
    ctx = list(as_ids(context))
    entries = []
    for tok in ids:
        dist = np.asarray(model.next_dist(ctx), dtype=np.float64)
        raw = float(dist[tok])
        if truncation is None:
            trunc = raw
        else:
            mode, value = truncation
            trunc = float(decode.truncate_renormalize(dist, mode, value)[tok])
        entries.append(TraceEntry(token=int(tok), prob=raw, truncated_prob=trunc))
        ctx.append(int(tok))
    return ProbTrace(entries=tuple(entries))
