from __future__ import annotations

import math

import numpy as np
import pytest

from lssa.corpus import BOS, TokenSequence, build_vocab, encode_texts, tokenize
from lssa.errors import ConfigError, DegenerateInputError
from lssa.language_model import (auc, discrimination, next_token_distribution, perplexities, perplexity,
                                 perplexity_from_probs, perplexity_report, position_means,
                                 positionwise_from_probs, positionwise_perplexity, token_probabilities,
                                 train_lm, unigram_perplexity)
from lssa.lstm import ModelConfig, ModelParams
from conftest import random_sequences
from oracles import loop_perplexity, lstm_lm_conditionals, welford_mean

SENTENCE = "the quick brown fox jumps over the lazy dog"


def test_perplexity_examples():
    assert perplexity_from_probs([1.0, 1.0, 1.0]) == 1.0
    for n in (1, 3, 17):
        assert perplexity_from_probs([0.5] * n) == pytest.approx(2.0, rel=1e-15)
    assert perplexity_from_probs([0.5, 0.25]) == pytest.approx(2 ** 1.5, abs=1e-6)
    assert positionwise_from_probs([0.25])[0] == 4.0
    assert np.array_equal(positionwise_from_probs([1.0, 1.0]), [1.0, 1.0])


def test_perplexity_degenerate():
    with pytest.raises(DegenerateInputError):
        perplexity_from_probs([])
    with pytest.raises(DegenerateInputError):
        positionwise_from_probs([])


def test_perplexity_matches_scalar_oracle(skewed_lm):
    for s in random_sequences(21, skewed_lm.config.vocab_size, 12, 1, 10):
        cond = lstm_lm_conditionals(skewed_lm, s.ids)
        assert perplexity(skewed_lm, s) == pytest.approx(loop_perplexity(cond), rel=1e-9)
        pw = positionwise_perplexity(skewed_lm, s)
        assert np.allclose(pw, [1 / p for p in cond], rtol=1e-9)
        geo = math.exp(np.mean(np.log(pw)))
        assert geo == pytest.approx(perplexity(skewed_lm, s), rel=1e-9)


def test_batched_scores_equal_single(skewed_lm):
    seqs = random_sequences(3, skewed_lm.config.vocab_size, 9, 1, 12)
    batched = perplexities(skewed_lm, seqs)
    single = [perplexity(skewed_lm, s) for s in seqs]
    assert batched.tolist() == single


def test_next_token_distribution(skewed_lm):
    p = next_token_distribution(skewed_lm, [BOS, 5, 9])
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(p, next_token_distribution(skewed_lm, [BOS, 5, 9]))
    with pytest.raises(ConfigError):
        next_token_distribution(skewed_lm, [5])


def test_zero_weight_model_is_uniform():
    p = ModelParams.init(ModelConfig(30, 4, 5, 2), seed=0)
    for b in p.blocks.values():
        b.value[:] = 0.0
    assert np.allclose(next_token_distribution(p, [BOS, 7]), 1 / 30, rtol=0, atol=1e-15)


def _repeated_corpus(copies):
    vocab = build_vocab([tokenize(SENTENCE)], 20)
    return vocab, encode_texts([SENTENCE] * copies, vocab)


def test_initial_loss_is_log_vocab():
    vocab, seqs = _repeated_corpus(8)
    h = train_lm(seqs, seqs[:2], ModelConfig(len(vocab), 8, 8, 2), seed=1, epochs=0)
    assert h.val_loss[0] == pytest.approx(math.log(len(vocab)), rel=1e-3)


def test_memorises_single_sentence():
    vocab, seqs = _repeated_corpus(256)
    h = train_lm(seqs, seqs[:4], ModelConfig(len(vocab), 16, 32, 2, 0.5), seed=1, epochs=50,
                 batch_size=16)
    assert math.exp(h.val_loss[-1]) < 1.25
    assert perplexity(h.params, seqs[0]) < 1.25


def test_training_deterministic():
    vocab, seqs = _repeated_corpus(20)
    runs = [train_lm(seqs, seqs[:3], ModelConfig(len(vocab), 6, 8, 2), seed=4, epochs=3, batch_size=8)
            for _ in range(2)]
    assert runs[0].train_loss == runs[1].train_loss and runs[0].val_loss == runs[1].val_loss


def test_train_lm_empty():
    with pytest.raises(ConfigError):
        train_lm([], [], ModelConfig(10), seed=0)


def test_unigram_baseline_hand_value():
    a = TokenSequence([BOS, 4, 4, 3])
    # counts {4: 2, 3: 1}, add-one over support {3, 4}: p(4)=3/5, p(3)=2/5
    expected = 2 ** (-(2 * math.log2(3 / 5) + math.log2(2 / 5)) / 3)
    assert unigram_perplexity([a], [a]) == pytest.approx(expected, rel=1e-12)


def test_auc_examples():
    assert auc([1, 2], [3, 4]) == 1.0
    assert auc([3, 4], [1, 2]) == 0.0
    assert auc([1, 2, 3], [1, 2, 3]) == 0.5
    assert discrimination(0.2) == 0.8 and discrimination(0.7) == 0.7


def test_report_identical_sets(skewed_lm):
    seqs = random_sequences(5, skewed_lm.config.vocab_size, 20, 2, 8)
    rep = perplexity_report(skewed_lm, {"carrier": seqs, "stego": seqs}, bins=8)
    assert rep.auc["stego"] == 0.5 and rep.separation["stego"] == 0.0
    assert np.array_equal(rep.classes["carrier"].position_means, rep.classes["stego"].position_means)
    assert np.array_equal(rep.classes["carrier"].counts, rep.classes["stego"].counts)


def test_report_single_text(skewed_lm):
    seqs = random_sequences(6, skewed_lm.config.vocab_size, 1)
    rep = perplexity_report(skewed_lm, {"carrier": seqs}, bins=5)
    assert np.count_nonzero(rep.classes["carrier"].counts) == 1
    with pytest.raises(ConfigError):
        perplexity_report(skewed_lm, {"carrier": []})


def test_position_means_match_streaming_oracle(skewed_lm):
    seqs = random_sequences(7, skewed_lm.config.vocab_size, 1000, 1, 15)
    curves = [positionwise_from_probs(p) for p in token_probabilities(skewed_lm, seqs)]
    means = position_means(curves)
    for pos in range(len(means)):
        ref = welford_mean(c[pos] for c in curves if len(c) > pos)
        assert means[pos] == pytest.approx(ref, rel=1e-12)
