from __future__ import annotations

import numpy as np
import pytest

from lssa.autoencoder import AeConfig, encode_state, reconstruct, train_ae
from lssa.corpus import build_vocab, encode_texts, pad_batch, tokenize
from lssa.errors import ConfigError
from lssa.lstm import ModelConfig, ModelParams, forward_sequence, grad_check
from conftest import random_sequences

SENTENCE = "the quick brown fox jumps over the lazy dog"


def test_ae_grad_check():
    assert grad_check(ModelConfig(12, 4, 5, 2, 1.0), seed=3, objective="ae") < 1e-4


def test_encode_state_is_encoder_final_state(tiny_config):
    p = ModelParams.init(tiny_config, seed=2, scale=0.5)
    batch = pad_batch(random_sequences(4, tiny_config.vocab_size, 5, 1, 9))
    enc = encode_state(p, batch)
    ref = forward_sequence(p, batch.ids, batch.token_mask).final
    assert len(enc) == tiny_config.layers
    for (h, c), (hr, cr) in zip(enc, ref):
        assert np.allclose(h, hr, atol=1e-13) and np.allclose(c, cr, atol=1e-13)


def test_memorises_single_sentence():
    vocab = build_vocab([tokenize(SENTENCE)], 20)
    seqs = encode_texts([SENTENCE] * 256, vocab)
    cfg = ModelConfig(len(vocab), 16, 32, 2, 0.5)
    h = train_ae(seqs, seqs[:4], cfg, seed=1, epochs=50, batch_size=16)
    assert h.val_loss[-1] < h.val_loss[0]
    assert reconstruct(h.params, seqs[:4]) == 1.0
    assert reconstruct(h.params, seqs[:4], teacher_forcing=False) == 1.0


def test_training_deterministic():
    seqs = random_sequences(8, 20, 24, 2, 6)
    cfg = ModelConfig(20, 4, 6, 1)
    a = train_ae(seqs, seqs[:4], cfg, seed=5, epochs=2, batch_size=8)
    b = train_ae(seqs, seqs[:4], AeConfig(cfg), seed=5, epochs=2, batch_size=8)
    assert a.val_loss == b.val_loss
    assert all(np.array_equal(a.params[n].value, b.params[n].value) for n in a.params.names())


def test_bad_inputs():
    with pytest.raises(ConfigError):
        train_ae([], [], ModelConfig(10), seed=0)
    with pytest.raises(ConfigError):
        train_ae(random_sequences(0, 10, 2), [], AeConfig(ModelConfig(10), teacher_forcing=False), seed=0)
