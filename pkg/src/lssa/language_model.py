"""Next-word LSTM language model: training, conditional distributions, perplexity."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import BOS, TokenSequence, make_batches, pad_batch
from .errors import ConfigError, DegenerateInputError
from .lstm import ModelConfig, ModelParams, fixed_linear, lm_objective, lm_probabilities
from .numkernel import PROB_FLOOR
from .training import TrainHistory, train_loop


class LmTask:
    head = "lm"
    stage = "lm"

    def loss(self, params, batch, rng=None, grad=True):
        return lm_objective(params, batch.ids, batch.target_mask, rng, grad=grad)


def train_lm(train: Sequence[TokenSequence], val: Sequence[TokenSequence], config: ModelConfig,
             seed: int, epochs: int = 50, batch_size: int = 128, lr: float = 1e-3,
             params: Optional[ModelParams] = None, log=None) -> TrainHistory:
    """Teacher-forced next-token training; returns the best-validation model."""
    if not train:
        raise ConfigError("LM training set is empty")
    params = params or ModelParams.init(config, seed, head="lm")
    return train_loop(params, LmTask(), train, val, seed=seed, epochs=epochs,
                      batch_size=batch_size, lr=lr, log=log)


def next_token_distribution(params: ModelParams, prefix: Sequence[int]) -> np.ndarray:
    if not prefix or prefix[0] != BOS:
        raise ConfigError("prefix must start with BOS")
    ids = np.asarray([prefix], dtype=np.int64)
    return lm_probabilities(params, ids, np.ones(ids.shape))[0, -1]


def token_probabilities(params: ModelParams, sequences: Sequence[TokenSequence],
                        batch_size: int = 128) -> list[np.ndarray]:
    """Pr(w_i | w_<i) for every scored position of every sequence."""
    out = []
    lin = fixed_linear(params)
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start:start + batch_size]
        batch = pad_batch(chunk)
        probs = lm_probabilities(params, batch.ids[:, :-1], batch.target_mask, lin)
        tgt = batch.ids[:, 1:]
        picked = np.take_along_axis(probs, tgt[:, :, None], axis=2)[:, :, 0]
        for r, s in enumerate(chunk):
            out.append(picked[r, : s.n].copy())
    return out


def perplexity_from_probs(probs: np.ndarray) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if p.size == 0:
        raise DegenerateInputError("perplexity needs at least one scored position")
    return float(2.0 ** (-np.mean(np.log2(np.maximum(p, PROB_FLOOR)))))


def positionwise_from_probs(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.size == 0:
        raise DegenerateInputError("perplexity needs at least one scored position")
    return 2.0 ** (-np.log2(np.maximum(p, PROB_FLOOR)))


def perplexity(params: ModelParams, sequence: TokenSequence) -> float:
    if sequence.n < 1:
        raise DegenerateInputError("sequence has no scored positions")
    return perplexity_from_probs(token_probabilities(params, [sequence])[0])


def positionwise_perplexity(params: ModelParams, sequence: TokenSequence) -> np.ndarray:
    if sequence.n < 1:
        raise DegenerateInputError("sequence has no scored positions")
    return positionwise_from_probs(token_probabilities(params, [sequence])[0])


def perplexities(params: ModelParams, sequences: Sequence[TokenSequence]) -> np.ndarray:
    return np.array([perplexity_from_probs(p) for p in token_probabilities(params, sequences)])


def unigram_perplexity(train: Sequence[TokenSequence], evaluate: Sequence[TokenSequence]) -> float:
    """Perplexity of ``evaluate`` under the maximum-likelihood unigram of ``train``.

    Counts scored tokens only (everything after BOS); add-one smoothing keeps
    unseen ids finite.
    """
    counts = Counter(i for s in train for i in s.ids[1:])
    support = set(counts) | {i for s in evaluate for i in s.ids[1:]}
    total = sum(counts.values()) + len(support)
    log2sum = n = 0
    for s in evaluate:
        for i in s.ids[1:]:
            log2sum += math.log2((counts.get(i, 0) + 1) / total)
            n += 1
    return 2.0 ** (-log2sum / n)


# --------------------------------------------------------------------------
# reporting
# --------------------------------------------------------------------------

def auc(negatives, positives) -> float:
    """Mann-Whitney AUC: P(positive score > negative score) + 0.5 P(tie)."""
    neg = np.sort(np.asarray(negatives, dtype=np.float64))
    pos = np.asarray(positives, dtype=np.float64)
    if neg.size == 0 or pos.size == 0:
        return float("nan")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    return float((below.sum() + 0.5 * (upto - below).sum()) / (neg.size * pos.size))


def position_means(curves: Sequence[np.ndarray]) -> np.ndarray:
    """Mean per position over every curve long enough to reach it."""
    width = max((len(c) for c in curves), default=0)
    sums = np.zeros(width)
    counts = np.zeros(width)
    for c in curves:
        sums[: len(c)] += c
        counts[: len(c)] += 1
    return sums / np.maximum(counts, 1)


@dataclass
class ClassPerplexity:
    perplexities: np.ndarray
    position_means: np.ndarray
    counts: np.ndarray


@dataclass
class PerplexityReport:
    classes: dict                  # name -> ClassPerplexity
    bin_edges: np.ndarray
    auc: dict = field(default_factory=dict)          # stego class -> AUC (stego = positive)
    separation: dict = field(default_factory=dict)   # stego class -> mean log2 Perp gap


def perplexity_report(params: ModelParams, labeled: dict, bins: int | Sequence[float] = 20,
                      reference: str = "carrier", log_bins: bool = True) -> PerplexityReport:
    """Per-class text perplexities, position-wise means and shared histograms.

    ``labeled`` maps class name to sequences; every other class is compared with
    ``reference`` through AUC (larger Perp scored as stego) and the signed gap
    of mean log2-perplexity.
    """
    per_class = {}
    for name, seqs in labeled.items():
        if not seqs:
            raise ConfigError(f"class {name!r} has no texts")
        probs = token_probabilities(params, seqs)
        pw = [positionwise_from_probs(p) for p in probs]
        per_class[name] = (np.array([perplexity_from_probs(p) for p in probs]), position_means(pw))
    allp = np.concatenate([v[0] for v in per_class.values()])
    if np.isscalar(bins) or isinstance(bins, int):
        lo, hi = float(allp.min()), float(allp.max())
        if hi <= lo:
            hi = lo + 1.0
        edges = (np.geomspace(lo, hi, int(bins) + 1) if log_bins and lo > 0
                 else np.linspace(lo, hi, int(bins) + 1))
    else:
        edges = np.asarray(bins, dtype=np.float64)
    classes = {name: ClassPerplexity(p, pm, np.histogram(p, edges)[0])
               for name, (p, pm) in per_class.items()}
    report = PerplexityReport(classes, edges)
    if reference in classes:
        ref = classes[reference].perplexities
        for name, cp in classes.items():
            if name == reference:
                continue
            report.auc[name] = auc(ref, cp.perplexities)
            report.separation[name] = float(np.mean(np.log2(cp.perplexities)) - np.mean(np.log2(ref)))
    return report


def discrimination(a: float) -> float:
    """Direction-free AUC: how well a score separates classes either way round."""
    return max(a, 1.0 - a)
