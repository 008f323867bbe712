"""Feed-forward neural language model with hand-written gradients.

Architecture: the last ``context`` token ids are embedded (vocab x d
table), concatenated to a single vector, passed through one tanh hidden
layer, and projected to vocab logits. Optional heads share the hidden
layer: a scalar regression head and an n-label classification head.

Contexts shorter than the window are left-padded with a reserved pad
token. The pad token is appended to the supplied vocab (so existing ids
are unchanged) and its embedding trains like any other row.

Training support is deliberately transparent: ``forward`` returns a
cache of intermediates and ``backward`` accumulates parameter gradients
from output-side gradients, so every loss in :mod:`genteval.losses` is
an explicit application of the chain rule that finite differences can
check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import Vocab
from ..errors import ConfigError
from ..rng import SplitMix64
from .base import as_ids

PAD_TOKEN = "<pad>"


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _uniform(rng: SplitMix64, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.empty(int(np.prod(shape)))
    for i in range(arr.size):
        arr[i] = rng.uniform() * 0.2 - 0.1
    return arr.reshape(shape)


@dataclass
class FfnCache:
    """Intermediates for one batch of context windows."""

    ctx: np.ndarray  # (T, c) int64
    x: np.ndarray  # (T, c*d) concatenated embeddings
    h: np.ndarray  # (T, hidden) tanh activations
    logits: np.ndarray | None = None  # (T, V), filled on demand


class FeedForwardLM:
    backend = "ffn"

    def __init__(
        self,
        vocab: Vocab,
        context: int,
        embed_dim: int,
        hidden_dim: int,
        params: dict[str, np.ndarray],
        pad_id: int,
        n_labels: int = 0,
        regression: bool = False,
    ) -> None:
        self.vocab = vocab
        self.context = context
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.params = params
        self.pad_id = pad_id
        self.n_labels = n_labels
        self.regression = regression

    @classmethod
    def init(
        cls,
        vocab: Vocab,
        context: int = 8,
        embed_dim: int = 32,
        hidden_dim: int = 64,
        seed: int = 0,
        n_labels: int = 0,
        regression: bool = False,
    ) -> "FeedForwardLM":
        """Fresh model with seeded uniform [-0.1, 0.1) weights, zero biases.

        Weight tensors are filled from a splitmix stream in a fixed
        order (embedding, hidden, output, regression head,
        classification head), so identical seeds give identical models.
        """
        if min(context, embed_dim, hidden_dim) < 1:
            raise ConfigError("context, embed_dim and hidden_dim must be positive")
        if n_labels < 0:
            raise ConfigError("n_labels must be non-negative")
        if PAD_TOKEN in vocab:
            padded, pad_id = vocab, vocab.id_of(PAD_TOKEN)
        else:
            padded = Vocab(vocab.tokens + (PAD_TOKEN,))
            pad_id = padded.size - 1
        rng = SplitMix64(seed)
        v = padded.size
        params = {
            "emb": _uniform(rng, (v, embed_dim)),
            "w1": _uniform(rng, (hidden_dim, context * embed_dim)),
            "b1": np.zeros(hidden_dim),
            "w2": _uniform(rng, (v, hidden_dim)),
            "b2": np.zeros(v),
        }
        if regression:
            params["wr"] = _uniform(rng, (hidden_dim,))
            params["br"] = np.zeros(())
        if n_labels:
            params["wc"] = _uniform(rng, (n_labels, hidden_dim))
            params["bc"] = np.zeros(n_labels)
        return cls(
            padded, context, embed_dim, hidden_dim, params, pad_id,
            n_labels=n_labels, regression=regression,
        )

    @property
    def param_count(self) -> int:
        return sum(arr.size for arr in self.params.values())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}

    # -- forward ----------------------------------------------------------

    def windows(self, ids: Sequence[int], context: Sequence[int] = ()) -> np.ndarray:
        """(len(ids), c) matrix: row t holds the window conditioning ids[t]."""
        c = self.context
        ctx = tuple(context)
        full = (self.pad_id,) * c + ctx + tuple(ids)
        offset = len(ctx)
        return np.array(
            [full[offset + t : offset + t + c] for t in range(len(ids))],
            dtype=np.int64,
        ).reshape(len(ids), c)

    def forward(self, ctx: np.ndarray) -> FfnCache:
        t = ctx.shape[0]
        x = self.params["emb"][ctx].reshape(t, self.context * self.embed_dim)
        h = np.tanh(x @ self.params["w1"].T + self.params["b1"])
        return FfnCache(ctx=ctx, x=x, h=h)

    def vocab_logits(self, cache: FfnCache) -> np.ndarray:
        if cache.logits is None:
            cache.logits = cache.h @ self.params["w2"].T + self.params["b2"]
        return cache.logits

    def reg_predictions(self, cache: FfnCache) -> np.ndarray:
        if not self.regression:
            raise ConfigError("model has no regression head")
        return cache.h @ self.params["wr"] + self.params["br"]

    def cls_logits(self, cache: FfnCache) -> np.ndarray:
        if not self.n_labels:
            raise ConfigError("model has no classification head")
        return cache.h @ self.params["wc"].T + self.params["bc"]

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        cache = self.forward(self._single_window(as_ids(context)))
        return softmax(self.vocab_logits(cache))[0]

    def _single_window(self, ids: tuple[int, ...]) -> np.ndarray:
        c = self.context
        window = ((self.pad_id,) * c + ids)[-c:]
        return np.array([window], dtype=np.int64)

    def score(self, seq, context: Sequence[int] = ()) -> float:
        ids = as_ids(seq)
        if not ids:
            raise ValueError("cannot score an empty sequence")
        cache = self.forward(self.windows(ids, as_ids(context)))
        logp = log_softmax(self.vocab_logits(cache))
        return float(logp[np.arange(len(ids)), list(ids)].sum())

    # -- backward ---------------------------------------------------------

    def backward(
        self,
        cache: FfnCache,
        grads: dict[str, np.ndarray],
        dlogits: np.ndarray | None = None,
        dreg: np.ndarray | None = None,
        dcls: np.ndarray | None = None,
    ) -> None:
        """Accumulate parameter gradients from output-side gradients.

        ``dlogits`` is d(loss)/d(vocab logits), ``dreg`` and ``dcls``
        the analogues for the heads; any may be omitted.
        """
        dh = np.zeros_like(cache.h)
        if dlogits is not None:
            grads["w2"] += dlogits.T @ cache.h
            grads["b2"] += dlogits.sum(axis=0)
            dh += dlogits @ self.params["w2"]
        if dreg is not None:
            grads["wr"] += cache.h.T @ dreg
            grads["br"] += dreg.sum()
            dh += np.outer(dreg, self.params["wr"])
        if dcls is not None:
            grads["wc"] += dcls.T @ cache.h
            grads["bc"] += dcls.sum(axis=0)
            dh += dcls @ self.params["wc"]
        dz1 = dh * (1.0 - cache.h**2)
        grads["w1"] += dz1.T @ cache.x
        grads["b1"] += dz1.sum(axis=0)
        dx = (dz1 @ self.params["w1"]).reshape(-1, self.context, self.embed_dim)
        np.add.at(grads["emb"], cache.ctx, dx)


def ffn_init(vocab: Vocab, **kwargs) -> FeedForwardLM:
    """Alias for :meth:`FeedForwardLM.init`."""
    return FeedForwardLM.init(vocab, **kwargs)
