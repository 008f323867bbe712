"""Corpus ingestion: tokenization, chunking, splits, sentence pairing, TF-IDF.

All downstream components consume token ids, never raw text. The two
built-in schemes are deliberately simple and reversible enough for
desk-scale experiments:

* ``word``: split on Unicode whitespace, with punctuation characters
  (Unicode category P*) detached as single-character tokens, so
  ``"Hi, there"`` becomes ``["Hi", ",", "there"]``.
* ``char``: one token per Unicode scalar, whitespace included, which
  makes detokenization an exact inverse.

Text is NFC-normalized before tokenization; no other normalization is
applied (no lowercasing, no unicode folding).
"""

from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    BadOrder,
    ConfigError,
    CorpusTooSmall,
    EmptyInput,
    InsufficientData,
)
from .rng import SplitMix64

SCHEMES = ("word", "char")


class Vocab:
    """Immutable token-id table; ids are assigned in first-occurrence order."""

    __slots__ = ("tokens", "_index")

    def __init__(self, tokens: Iterable[str]) -> None:
        self.tokens = tuple(tokens)
        self._index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ConfigError("vocab contains duplicate surfaces")

    @classmethod
    def placeholder(cls, size: int) -> "Vocab":
        """Vocab with synthetic surfaces, for externally tokenized ids."""
        return cls(f"<{i}>" for i in range(size))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index[token]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def __repr__(self) -> str:
        return f"Vocab(size={self.size})"


@dataclass(frozen=True)
class TokenSequence:
    """Non-empty run of token ids indexing a specific Vocab."""

    ids: tuple[int, ...]
    vocab: Vocab

    def __post_init__(self) -> None:
        if not self.ids:
            raise EmptyInput("token sequence must contain at least one id")
        limit = self.vocab.size
        for i in self.ids:
            if not 0 <= i < limit:
                raise ConfigError(f"token id {i} out of range for vocab of {limit}")

    def __len__(self) -> int:
        return len(self.ids)

    def window(self, start: int, stop: int) -> "TokenSequence":
        return TokenSequence(self.ids[start:stop], self.vocab)

    def surfaces(self) -> list[str]:
        return [self.vocab.tokens[i] for i in self.ids]


@dataclass(frozen=True)
class CorpusSplits:
    """Disjoint train/dev/test chunk lists, all chunks of equal length."""

    train: tuple[TokenSequence, ...]
    dev: tuple[TokenSequence, ...]
    test: tuple[TokenSequence, ...]
    seq_len: int
    ratios: tuple[float, float, float]

    @property
    def counts(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.dev), len(self.test))


@dataclass(frozen=True)
class SentencePair:
    first: TokenSequence
    second: TokenSequence
    label: str  # "positive" | "negative"
    mode: str  # "nsp" | "sop"


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _word_surfaces(text: str) -> list[str]:
    out: list[str] = []
    for chunk in text.split():
        run = []
        for ch in chunk:
            if _is_punct(ch):
                if run:
                    out.append("".join(run))
                    run = []
                out.append(ch)
            else:
                run.append(ch)
        if run:
            out.append("".join(run))
    return out


def surface_tokens(text: str, scheme: str) -> list[str]:
    """Tokenize to surfaces without building a vocab. NFC-normalizes first."""
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown tokenizer scheme {scheme!r}")
    text = unicodedata.normalize("NFC", text)
    if scheme == "word":
        return _word_surfaces(text)
    return list(text)


def tokenize(text: str, scheme: str = "word") -> tuple[TokenSequence, Vocab]:
    """Tokenize text, assigning fresh ids in first-occurrence order."""
    surfaces = surface_tokens(text, scheme)
    if not surfaces:
        raise EmptyInput("no tokens after normalization")
    index: dict[str, int] = {}
    ids = []
    for s in surfaces:
        if s not in index:
            index[s] = len(index)
        ids.append(index[s])
    vocab = Vocab(index)
    return TokenSequence(tuple(ids), vocab), vocab


def encode(text: str, vocab: Vocab, scheme: str = "word", on_oov: str = "error") -> TokenSequence:
    """Tokenize text against a fixed vocab.

    ``on_oov`` is "error" to raise on unknown surfaces or "skip" to drop
    them (the CLI uses "skip" so held-out evaluation text with a few
    unseen words still scores).
    """
    surfaces = surface_tokens(text, scheme)
    ids = []
    for s in surfaces:
        if s in vocab:
            ids.append(vocab.id_of(s))
        elif on_oov == "error":
            raise EmptyInput(f"surface {s!r} not in vocab")
    if not ids:
        raise EmptyInput("no in-vocab tokens")
    return TokenSequence(tuple(ids), vocab)


def detokenize(seq: TokenSequence, scheme: str = "word") -> str:
    """Inverse of tokenize up to whitespace; exact for the char scheme."""
    if scheme == "char":
        return "".join(seq.surfaces())
    return " ".join(seq.surfaces())


def split_corpus(
    seq: TokenSequence,
    seq_len: int,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> CorpusSplits:
    """Chunk into consecutive ``seq_len`` windows and split by ratio.

    The trailing remainder shorter than ``seq_len`` is dropped. With N
    chunks, train takes the first floor(N*r1), dev the next floor(N*r2),
    and test everything left, so the three parts partition the chunks.
    """
    if seq_len < 2:
        raise ConfigError("seq_len must be at least 2")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError("need three non-negative ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("ratios must sum to 1")
    n_chunks = len(seq) // seq_len
    if n_chunks < 3:
        raise CorpusTooSmall(f"corpus yields {n_chunks} chunks, need at least 3")
    chunks = tuple(
        seq.window(i * seq_len, (i + 1) * seq_len) for i in range(n_chunks)
    )
    n_train = int(n_chunks * ratios[0])
    n_dev = int(n_chunks * ratios[1])
    return CorpusSplits(
        train=chunks[:n_train],
        dev=chunks[n_train : n_train + n_dev],
        test=chunks[n_train + n_dev :],
        seq_len=seq_len,
        ratios=tuple(ratios),
    )


def extract_ngrams(ids: Sequence[int], n: int) -> Counter:
    """Multiset of all length-n contiguous windows, as a Counter."""
    if n < 1:
        raise BadOrder("n-gram order must be at least 1")
    return Counter(tuple(ids[i : i + n]) for i in range(len(ids) - n + 1))


_TERMINALS = ".!?"


def segment_sentences(text: str) -> list[str]:
    """Split after ./!/? followed by whitespace and an uppercase letter.

    End of text also terminates a sentence. This is a deliberately plain
    rule: abbreviations like "Mr. Smith" will over-split, and lowercase
    continuations ("hello! again") never split.
    """
    text = unicodedata.normalize("NFC", text)
    sentences = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in _TERMINALS:
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            if j == n or (j > i + 1 and text[j].isupper()):
                piece = text[start:i + 1].strip()
                if piece:
                    sentences.append(piece)
                start = j
                i = j
                continue
        i += 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def build_pair_datasets(
    sentences: Sequence[TokenSequence],
    mode: str,
    count: int,
    seed: int,
) -> list[tuple[SentencePair, SentencePair]]:
    """Build (positive, negative) sentence-pair items for ranking losses.

    Positives are adjacent sentences in corpus order. Negatives depend on
    the mode: "nsp" swaps in a randomly drawn second sentence that is
    never the true successor (by content); "sop" swaps the order of the
    positive pair. Selection of which adjacent pairs to use and negative
    draws are deterministic under ``seed``.
    """
    if mode not in ("nsp", "sop"):
        raise ConfigError(f"unknown pair mode {mode!r}")
    if count < 1:
        raise ConfigError("count must be positive")
    n_adjacent = len(sentences) - 1
    if count > n_adjacent:
        raise InsufficientData(
            f"asked for {count} pairs but only {n_adjacent} adjacent pairs exist"
        )
    rng = SplitMix64(seed)
    starts = list(range(n_adjacent))
    rng.shuffle(starts)
    starts = sorted(starts[:count])
    items = []
    for i in starts:
        pos = SentencePair(sentences[i], sentences[i + 1], "positive", mode)
        if mode == "sop":
            neg = SentencePair(sentences[i + 1], sentences[i], "negative", mode)
        else:
            successor = sentences[i + 1].ids
            candidates = [s for s in sentences if s.ids != successor]
            if not candidates:
                raise InsufficientData("every sentence equals the true successor")
            neg = SentencePair(
                sentences[i],
                candidates[rng.randint(len(candidates))],
                "negative",
                mode,
            )
        items.append((pos, neg))
    return items


@dataclass
class TfidfTable:
    """Per-(document, token) TF-IDF scores over fixed-length documents.

    tf is the within-document relative frequency; idf is ln(n_docs / df)
    with df the number of documents containing the token. A token that
    appears in every document therefore scores exactly 0 everywhere.
    """

    doc_len: int
    n_docs: int
    scores: list[dict[int, float]] = field(repr=False)

    def score(self, doc: int, token: int) -> float:
        return self.scores[doc].get(token, 0.0)

    def position_targets(self, ids: Sequence[int]) -> list[float]:
        """Per-position regression targets for the chunked region.

        Position p belongs to document p // doc_len; positions past the
        last full document are not covered and excluded from the output.
        """
        covered = self.n_docs * self.doc_len
        return [
            self.scores[p // self.doc_len].get(ids[p], 0.0)
            for p in range(min(len(ids), covered))
        ]


def tfidf_scores(seq: TokenSequence, doc_len: int) -> TfidfTable:
    """TF-IDF over consecutive ``doc_len`` windows; remainder dropped."""
    if doc_len < 1:
        raise ConfigError("doc_len must be positive")
    n_docs = len(seq) // doc_len
    if n_docs < 1:
        raise CorpusTooSmall("corpus shorter than one document")
    doc_counts = [
        Counter(seq.ids[d * doc_len : (d + 1) * doc_len]) for d in range(n_docs)
    ]
    df = Counter()
    for counts in doc_counts:
        df.update(counts.keys())
    idf = {tok: math.log(n_docs / d) for tok, d in df.items()}
    scores = [
        {tok: (c / doc_len) * idf[tok] for tok, c in counts.items()}
        for counts in doc_counts
    ]
    return TfidfTable(doc_len=doc_len, n_docs=n_docs, scores=scores)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

IDS_HEADER = "#vocab_size="


def write_ids_file(path: str | Path, sequences: Iterable[Sequence[int]], vocab_size: int) -> None:
    """One sequence per line of space-separated ids, after a vocab header."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{IDS_HEADER}{vocab_size}\n")
        for ids in sequences:
            f.write(" ".join(str(i) for i in ids))
            f.write("\n")


def read_ids_file(path: str | Path) -> tuple[list[list[int]], int]:
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith(IDS_HEADER):
            raise EmptyInput(f"{path}: missing {IDS_HEADER}N header")
        vocab_size = int(header[len(IDS_HEADER) :])
        sequences = []
        for line in f:
            line = line.strip()
            if line:
                sequences.append([int(tok) for tok in line.split()])
    return sequences, vocab_size


_SPLIT_FILES = {"train": "train.ids.txt", "dev": "dev.ids.txt", "test": "test.ids.txt"}


def save_splits(
    out_dir: str | Path,
    splits: CorpusSplits,
    tokenizer: dict,
    seed: int,
) -> Path:
    """Persist splits as three ids files plus a JSON manifest.

    ``tokenizer`` records how ids map back to text: for built-in schemes
    ``{"scheme": ..., "vocab": [...]}``, for pre-tokenized input
    ``{"scheme": "external", "vocab_size": N}``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab_size = _tokenizer_vocab_size(tokenizer)
    for name, fname in _SPLIT_FILES.items():
        part = getattr(splits, name)
        write_ids_file(out / fname, (s.ids for s in part), vocab_size)
    manifest = {
        "seq_len": splits.seq_len,
        "ratios": list(splits.ratios),
        "counts": list(splits.counts),
        "tokenizer": tokenizer,
        "seed": seed,
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest_path


def _tokenizer_vocab_size(tokenizer: dict) -> int:
    if "vocab" in tokenizer:
        return len(tokenizer["vocab"])
    return int(tokenizer["vocab_size"])


def vocab_from_manifest(manifest: dict) -> Vocab:
    tok = manifest["tokenizer"]
    if "vocab" in tok:
        return Vocab(tok["vocab"])
    return Vocab.placeholder(int(tok["vocab_size"]))


def load_splits(manifest_path: str | Path) -> tuple[CorpusSplits, dict]:
    manifest_path = Path(manifest_path)
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    vocab = vocab_from_manifest(manifest)
    parts = {}
    for name, fname in _SPLIT_FILES.items():
        sequences, vocab_size = read_ids_file(manifest_path.parent / fname)
        if vocab_size != vocab.size:
            raise ConfigError(f"{fname}: vocab size {vocab_size} != manifest {vocab.size}")
        parts[name] = tuple(TokenSequence(tuple(ids), vocab) for ids in sequences)
    splits = CorpusSplits(
        train=parts["train"],
        dev=parts["dev"],
        test=parts["test"],
        seq_len=int(manifest["seq_len"]),
        ratios=tuple(manifest["ratios"]),
    )
    return splits, manifest
