"""Sequence-autoencoder pre-training with a single shared LSTM.

The encoder pass reads BOS..EOS; its final (h, c) for every layer seeds the
decoder pass, which reads BOS-prefixed targets and predicts the sentence
through EOS with the LM head. Both passes use the same ModelParams object, so
gradients from encoder and decoder land in the same buffers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import Batch, EOS, make_batches
from .errors import ConfigError
from .lstm import (ModelConfig, ModelParams, Stepper, backward_sequence, fixed_linear,
                   forward_sequence, lm_objective, zero_state)
from .numkernel import Rng, softmax_rows
from .training import TrainHistory, train_loop


@dataclass
class AeConfig:
    model: ModelConfig
    teacher_forcing: bool = True


def ae_objective(params: ModelParams, batch: Batch, rng: Optional[Rng] = None, grad: bool = True):
    enc = forward_sequence(params, batch.ids, batch.token_mask, rng)
    loss, count, d_init = lm_objective(params, batch.ids, batch.target_mask, rng,
                                       init_state=enc.final, grad=grad)
    if grad and d_init is not None:
        backward_sequence(params, enc, None, d_init)
    return loss, count, None


class AeTask:
    head = "lm"
    stage = "ae-pretrain"

    def loss(self, params, batch, rng=None, grad=True):
        return ae_objective(params, batch, rng, grad)


def train_ae(train, val, config: AeConfig | ModelConfig, seed: int, epochs: int = 50,
             batch_size: int = 128, lr: float = 1e-3, params: Optional[ModelParams] = None,
             log=None) -> TrainHistory:
    if not train:
        raise ConfigError("AE training set is empty")
    model_cfg = config.model if isinstance(config, AeConfig) else config
    if isinstance(config, AeConfig) and not config.teacher_forcing:
        raise ConfigError("AE training without teacher forcing is not supported; "
                          "use reconstruct(..., teacher_forcing=False) for evaluation ablations")
    params = params or ModelParams.init(model_cfg, seed, head="lm")
    return train_loop(params, AeTask(), train, val, seed=seed, epochs=epochs,
                      batch_size=batch_size, lr=lr, log=log)


def encode_state(params: ModelParams, batch: Batch) -> list:
    return forward_sequence(params, batch.ids, batch.token_mask, None, None, fixed_linear(params)).final


def reconstruct(params: ModelParams, sequences, teacher_forcing: bool = True,
                batch_size: int = 128) -> float:
    """Token accuracy of reconstructing each sequence (positions after BOS)."""
    lin = fixed_linear(params)
    correct = total = 0.0
    for batch in make_batches(sequences, batch_size):
        state = forward_sequence(params, batch.ids, batch.token_mask, None, None, lin).final
        tgt = batch.ids[:, 1:]
        m = batch.target_mask
        if teacher_forcing:
            dec = forward_sequence(params, batch.ids[:, :-1], m, None, state, lin)
            T, B, H = dec.outputs.shape
            logits = lin(dec.outputs.reshape(T * B, H), "lm.W") + params["lm.b"].value
            pred = logits.argmax(axis=1).reshape(T, B).T
        else:
            stepper = Stepper(params, batch.size)
            stepper.state = [(h.copy(), c.copy()) for h, c in state]
            tok = batch.ids[:, 0]
            preds = []
            for _ in range(tgt.shape[1]):
                probs = stepper.step(tok)
                tok = probs.argmax(axis=1)
                preds.append(tok)
            pred = np.stack(preds, axis=1)
        correct += float(((pred == tgt) * m).sum())
        total += float(m.sum())
    return correct / total if total else 0.0
