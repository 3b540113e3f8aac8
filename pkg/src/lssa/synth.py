"""Synthetic line-per-sentence corpus from a seeded second-order Markov source.

Stands in for real corpora when none is supplied. The class of the next word
depends on the classes of the two previous words, so the chain is second
order, yet the class structure is shared across words and therefore learnable
from a few thousand sentences.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .corpus import write_corpus
from .errors import ConfigError
from .numkernel import Rng

_ONSETS = "b d f g k l m n p r s t v z ch sh th br dr gr kl pl st tr".split()
_VOWELS = "a e i o u ai ea oo".split()
_CODAS = ["", "", "", "n", "r", "s", "l", "m", "t"]


def synth_words(types: int, rng: Rng) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < types:
        n_syll = 1 + rng.randbelow(3)
        w = "".join(_ONSETS[rng.randbelow(len(_ONSETS))] + _VOWELS[rng.randbelow(len(_VOWELS))]
                    for _ in range(n_syll))
        w += _CODAS[rng.randbelow(len(_CODAS))]
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _poisson(rng: Rng, lam: float) -> int:
    if lam <= 0:
        return 0
    # Knuth for small rates, normal approximation above 30
    if lam > 30:
        u1, u2 = max(rng.random(), 1e-300), rng.random()
        z = math.sqrt(-2 * math.log(u1)) * math.cos(2 * math.pi * u2)
        return max(0, int(round(lam + math.sqrt(lam) * z)))
    limit, k, p = math.exp(-lam), 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


class MarkovSource:
    """Word classes follow a sparse class-trigram chain; words are emitted within class.

    Every class context ``(c[t-2], c[t-1])`` allows ``branching`` next classes
    with skewed weights, and a word is drawn from its class with Zipf weights.
    """

    def __init__(self, seed: int, types: int = 2000, classes: int = 20, branching: int = 4,
                 zipf: float = 1.3):
        if types < classes or classes < branching or branching < 1:
            raise ConfigError("need types >= classes >= branching >= 1")
        rng = Rng(seed)
        self.words = synth_words(types, rng.child("words"))
        self.classes = classes
        self.word_class = (rng.child("classes").permutation(types) % classes).astype(np.int64)
        self.members = [np.nonzero(self.word_class == c)[0] for c in range(classes)]
        # Zipf over each class's members, ranked by word index
        self.emit = []
        for m in self.members:
            w = 1.0 / np.arange(1, len(m) + 1) ** zipf
            self.emit.append(np.cumsum(w) / w.sum())
        # context index `classes` stands for "before the sentence"
        ctx = classes + 1
        trans_rng = rng.child("transitions")
        self.next_class = np.empty((ctx, ctx, branching), dtype=np.int64)
        self.next_cdf = np.empty((ctx, ctx, branching))
        for a in range(ctx):
            for b in range(ctx):
                self.next_class[a, b] = trans_rng.permutation(classes)[:branching]
                w = trans_rng.uniform(branching) ** 2 + 0.05
                self.next_cdf[a, b] = np.cumsum(w) / w.sum()

    def sentence(self, rng: Rng, length: int) -> list[str]:
        a = b = self.classes
        out = []
        for _ in range(length):
            cdf = self.next_cdf[a, b]
            c = int(self.next_class[a, b, min(int(np.searchsorted(cdf, rng.random(), side="right")),
                                               len(cdf) - 1)])
            emit = self.emit[c]
            k = min(int(np.searchsorted(emit, rng.random(), side="right")), len(emit) - 1)
            out.append(self.words[int(self.members[c][k])])
            a, b = b, c
        return out


def synth_corpus(seed: int, sentences: int, mean_len: float = 10.0, types: int = 2000,
                 classes: int = 20, branching: int = 4, path=None, min_len: int = 3,
                 max_len: int = 62, zipf: float = 1.3) -> list[str]:
    """Deterministic corpus; sentence lengths are ``min_len + Poisson(mean_len - min_len)``."""
    if sentences < 100:
        raise ConfigError("synth_corpus needs at least 100 sentences")
    source = MarkovSource(seed, types, classes, branching, zipf)
    rng = Rng(seed).child("sentences")
    lines = []
    for _ in range(sentences):
        n = min(max_len, min_len + _poisson(rng, mean_len - min_len))
        lines.append(" ".join(source.sentence(rng, n)))
    if path is not None:
        write_corpus(Path(path), lines)
    return lines
