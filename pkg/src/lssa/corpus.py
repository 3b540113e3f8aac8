"""Tokenization, vocabulary, stratified splits and padded batches."""

from __future__ import annotations

import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .numkernel import Rng

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")
N_SPECIALS = 4
MAX_LEN = 64

CARRIER, STEGO = 0, 1
LABEL_NAMES = {CARRIER: "carrier", STEGO: "stego"}

_PUNCT = set(string.punctuation)


def _is_punct(ch: str) -> bool:
    return ch in _PUNCT or unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and split off every punctuation char."""
    tokens: list[str] = []
    word: list[str] = []
    for ch in text.lower():
        if ch.isspace():
            if word:
                tokens.append("".join(word))
                word = []
        elif _is_punct(ch):
            if word:
                tokens.append("".join(word))
                word = []
            tokens.append(ch)
        else:
            word.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


class Vocab:
    def __init__(self, tokens: Sequence[str] = ()):
        self.token_of: list[str] = list(SPECIAL_TOKENS) + list(tokens)
        self.id_of: dict[str, int] = {t: i for i, t in enumerate(self.token_of)}
        if len(self.id_of) != len(self.token_of):
            raise ConfigError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.token_of)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.token_of == other.token_of

    def encode(self, tokens: Sequence[str], max_len: int = MAX_LEN) -> list[int]:
        """BOS + ids + EOS, truncated to ``max_len`` ids with EOS kept."""
        ids = [self.id_of.get(t, UNK) for t in tokens][: max_len - 2]
        return [BOS] + ids + [EOS]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.token_of[i] for i in ids if i >= N_SPECIALS]

    def save(self, path) -> None:
        lines = ["# lssa vocab v1", "# ids 0-3 reserved: " + " ".join(SPECIAL_TOKENS),
                 "# line k after this header holds token id k+4"]
        lines += self.token_of[N_SPECIALS:]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        start = 0
        while start < len(lines) and lines[start].startswith("# "):
            start += 1
        return cls(lines[start:])


def build_vocab(corpus: Iterable[Sequence[str]], cap: int) -> Vocab:
    """Keep the ``cap - 4`` most frequent tokens, ties broken lexicographically."""
    if cap < 5:
        raise ConfigError(f"vocab cap must be >= 5, got {cap}")
    counts = Counter(t for toks in corpus for t in toks)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([t for t, _ in ranked[: cap - N_SPECIALS]])


@dataclass
class TokenSequence:
    ids: list
    label: Optional[int] = None
    uid: str = ""

    @property
    def n(self) -> int:
        """Scored positions: everything after BOS through EOS."""
        return len(self.ids) - 1


def encode_texts(texts: Iterable[str], vocab: Vocab, label=None, prefix: str = "",
                 max_len: int = MAX_LEN) -> list[TokenSequence]:
    return [TokenSequence(vocab.encode(tokenize(t), max_len), label, f"{prefix}{i}")
            for i, t in enumerate(texts)]


def read_corpus(path) -> list[str]:
    text = Path(path).read_text(encoding="utf-8")
    return [line for line in text.split("\n") if line.strip()]


def write_corpus(path, lines: Iterable[str]) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _allocate(total: int, sizes: list[int]) -> list[int]:
    """Largest-remainder apportionment of ``total`` across groups."""
    n = sum(sizes)
    if n == 0:
        return [0] * len(sizes)
    quotas = [total * s / n for s in sizes]
    alloc = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - alloc[i]), i))
    for i in order[: total - sum(alloc)]:
        alloc[i] += 1
    return alloc


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int


def split_dataset(records: Sequence, seed: int, test_frac: float = 0.30,
                  val_frac: float = 0.10) -> DatasetSplit:
    """Stratified shuffle split: test fraction first, then validation out of train."""
    n = len(records)
    if n < 10:
        raise ConfigError(f"need at least 10 records to split, got {n}")
    rng = Rng(seed)
    labels = sorted({getattr(r, "label", None) for r in records}, key=lambda x: (x is None, x))
    groups = []
    for lab in labels:
        idx = [i for i, r in enumerate(records) if getattr(r, "label", None) == lab]
        perm = rng.child(f"split:{lab}").permutation(len(idx))
        groups.append([idx[j] for j in perm])
    sizes = [len(g) for g in groups]
    n_test = _round_half_up(test_frac * n)
    test_alloc = _allocate(n_test, sizes)
    n_val = _round_half_up(val_frac * (n - n_test))
    val_alloc = _allocate(n_val, [s - t for s, t in zip(sizes, test_alloc)])
    train, val, test = [], [], []
    for g, t, v in zip(groups, test_alloc, val_alloc):
        test += g[:t]
        val += g[t:t + v]
        train += g[t + v:]

    def ordered(idx, tag):
        perm = rng.child(tag).permutation(len(idx))
        return [records[idx[j]] for j in perm]

    return DatasetSplit(ordered(train, "train"), ordered(val, "val"), ordered(test, "test"), seed)


# --------------------------------------------------------------------------
# batches
# --------------------------------------------------------------------------

@dataclass
class Batch:
    ids: np.ndarray                  # (B, T) int64, right-padded with PAD
    token_mask: np.ndarray           # (B, T) 1.0 on real tokens, 0.0 on PAD
    labels: Optional[np.ndarray] = None
    uids: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def target_mask(self) -> np.ndarray:
        """Mask of scored positions (every real token after BOS)."""
        return self.token_mask[:, 1:]


def pad_batch(sequences: Sequence[TokenSequence]) -> Batch:
    width = max(len(s.ids) for s in sequences)
    ids = np.full((len(sequences), width), PAD, dtype=np.int64)
    mask = np.zeros((len(sequences), width))
    for r, s in enumerate(sequences):
        ids[r, : len(s.ids)] = s.ids
        mask[r, : len(s.ids)] = 1.0
    labels = None
    if all(s.label is not None for s in sequences):
        labels = np.array([s.label for s in sequences], dtype=np.int64)
    return Batch(ids, mask, labels, [s.uid for s in sequences])


def make_batches(sequences: Sequence[TokenSequence], batch_size: int,
                 seed: Optional[int] = None) -> list[Batch]:
    """Shuffle with ``seed`` (None keeps input order) and pad per batch."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.arange(len(sequences)) if seed is None else Rng(seed).permutation(len(sequences))
    return [pad_batch([sequences[i] for i in order[s:s + batch_size]])
            for s in range(0, len(sequences), batch_size)]
