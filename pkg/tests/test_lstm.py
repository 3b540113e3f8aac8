from __future__ import annotations

import numpy as np
import pytest

from lssa.corpus import pad_batch
from lssa.errors import CheckpointError, ConfigError, StateError
from lssa.lstm import (ModelConfig, ModelParams, Stepper, backward_sequence, clip_grad_norm, forward_sequence,
                       grad_check, lm_objective, lm_probabilities, load_checkpoint, param_shapes,
                       save_checkpoint)
from lssa.numkernel import Rng
from conftest import random_sequences


def test_param_shapes_and_init(tiny_config):
    p = ModelParams.init(tiny_config, seed=1)
    assert [(n, b.shape) for n, b in p.items()] == param_shapes(tiny_config, "lm")
    H = tiny_config.hidden_dim
    b = p["lstm0.b"].value
    assert (b[H:2 * H] == 1.0).all() and (b[:H] == 0).all() and (b[2 * H:] == 0).all()
    w = p["lstm1.U"].value
    assert w.min() >= -0.08 and w.max() <= 0.08


def test_lstm_shared_between_heads(tiny_config):
    lm = ModelParams.init(tiny_config, seed=4, head="lm")
    fc = ModelParams.init(tiny_config, seed=4, head="fc")
    for name in lm.names():
        if not name.startswith("lm."):
            assert np.array_equal(lm[name].value, fc[name].value)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(0)
    with pytest.raises(ConfigError):
        ModelConfig(10, dropout_keep=0.0)


def test_zero_weights_give_zero_states(tiny_config):
    p = ModelParams.init(tiny_config, seed=0)
    for b in p.blocks.values():
        b.value[:] = 0.0
    batch = pad_batch(random_sequences(0, tiny_config.vocab_size, 3))
    cache = forward_sequence(p, batch.ids, batch.token_mask)
    assert np.all(cache.outputs == 0.0)


def test_pad_positions_carry_state(tiny_config):
    p = ModelParams.init(tiny_config, seed=2, scale=0.5)
    seqs = random_sequences(5, tiny_config.vocab_size, 4, 1, 7)
    batch = pad_batch(seqs)
    cache = forward_sequence(p, batch.ids, batch.token_mask)
    for r, s in enumerate(seqs):
        last = len(s.ids) - 1
        for t in range(last + 1, batch.ids.shape[1]):
            assert np.array_equal(cache.outputs[t, r], cache.outputs[last, r])
        alone = forward_sequence(p, batch.ids[r:r + 1, :len(s.ids)], batch.token_mask[r:r + 1, :len(s.ids)])
        assert np.allclose(alone.final[-1][0][0], cache.final[-1][0][r], atol=1e-14)


def test_forward_deterministic(tiny_config):
    p = ModelParams.init(tiny_config, seed=3)
    batch = pad_batch(random_sequences(1, tiny_config.vocab_size, 4))
    a = forward_sequence(p, batch.ids, batch.token_mask, rng=Rng(5))
    b = forward_sequence(p, batch.ids, batch.token_mask, rng=Rng(5))
    assert np.array_equal(a.outputs, b.outputs)


def test_zero_upstream_gradient_gives_zero_grads(tiny_config):
    p = ModelParams.init(tiny_config, seed=3)
    batch = pad_batch(random_sequences(1, tiny_config.vocab_size, 4))
    cache = forward_sequence(p, batch.ids, batch.token_mask)
    backward_sequence(p, cache, np.zeros_like(cache.outputs))
    assert all(not b.grad.any() for b in p.blocks.values())


def test_backward_without_cache():
    with pytest.raises(StateError):
        backward_sequence(ModelParams.init(ModelConfig(10, 2, 3, 1), 0), None)


def test_identical_grads_across_runs(tiny_config):
    batch = pad_batch(random_sequences(7, tiny_config.vocab_size, 5))
    grads = []
    for _ in range(2):
        p = ModelParams.init(tiny_config, seed=8)
        lm_objective(p, batch.ids, batch.target_mask, rng=Rng(1))
        grads.append([b.grad.copy() for b in p.blocks.values()])
    assert all(np.array_equal(a, b) for a, b in zip(*grads))


@pytest.mark.parametrize("objective", ["lm", "cls", "ae"])
def test_grad_check(objective):
    err = grad_check(ModelConfig(12, 4, 5, 2, 1.0), seed=1, objective=objective)
    assert err < 1e-4


def test_grad_check_standard_init():
    assert grad_check(ModelConfig(10, 3, 4, 1, 1.0), seed=2, objective="lm", scale=0.08) < 1e-4


def test_grad_check_empty_batch():
    with pytest.warns(UserWarning):
        assert grad_check(ModelConfig(10, 3, 4, 1), sequences=[]) == 0.0


def test_clip_grad_norm(tiny_config):
    p = ModelParams.init(tiny_config, seed=1)
    for b in p.blocks.values():
        b.grad[:] = 1.0
    before = p.grad_norm()
    assert clip_grad_norm(p, 5.0) == pytest.approx(before)
    assert p.grad_norm() == pytest.approx(5.0)


def test_inference_is_batch_invariant(skewed_lm):
    seqs = random_sequences(9, skewed_lm.config.vocab_size, 6, 2, 9)
    batch = pad_batch(seqs)
    full = lm_probabilities(skewed_lm, batch.ids, batch.token_mask)
    for r, s in enumerate(seqs):
        one = lm_probabilities(skewed_lm, batch.ids[r:r + 1], batch.token_mask[r:r + 1])
        n = len(s.ids)
        assert np.array_equal(one[0, :n], full[r, :n])


def test_stepper_matches_sequence_forward(skewed_lm):
    seqs = random_sequences(4, skewed_lm.config.vocab_size, 3, 4, 4)
    batch = pad_batch(seqs)
    full = lm_probabilities(skewed_lm, batch.ids, batch.token_mask)
    stepper = Stepper(skewed_lm, 3)
    for t in range(batch.ids.shape[1]):
        assert np.array_equal(stepper.step(batch.ids[:, t]), full[:, t])


def test_embedding_index_error(tiny_config):
    p = ModelParams.init(tiny_config, seed=1)
    ids = np.array([[2, tiny_config.vocab_size]])
    with pytest.raises(IndexError):
        forward_sequence(p, ids, np.ones(ids.shape))


def test_checkpoint_roundtrip(tmp_path, tiny_config):
    p = ModelParams.init(tiny_config, seed=6, head="fc")
    save_checkpoint(tmp_path / "m.ckpt", p, 6, "test", {"k": 1})
    q, header = load_checkpoint(tmp_path / "m.ckpt")
    assert header["stage"] == "test" and header["extra"] == {"k": 1} and q.head == "fc"
    assert all(np.array_equal(p[n].value, q[n].value) for n in p.names())


def test_checkpoint_corruption(tmp_path, tiny_config):
    p = ModelParams.init(tiny_config, seed=6)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, p, 6, "test")
    data = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXXX\n" + data[6:])
    (tmp_path / "short").write_bytes(data[:-8])
    (tmp_path / "long").write_bytes(data + b"\0")
    for name in ("bad", "short", "long"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)
