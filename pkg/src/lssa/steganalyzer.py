"""Carrier/stego classification: LSTM + 2-way head, and a perplexity threshold baseline.

Stego is the positive class for precision, recall and F1.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import CARRIER, STEGO, TokenSequence, make_batches
from .errors import CheckpointError, ConfigError
from .lstm import ModelConfig, ModelParams, cls_objective, final_hidden, fixed_linear, load_checkpoint
from .numkernel import ParamBlock, softmax_rows
from .training import TrainHistory, train_loop

INIT_MODES = ("random", "from_lm", "from_ae")


@dataclass
class MetricsReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    loss_curves: dict = field(default_factory=dict)
    epochs_to_threshold: Optional[int] = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def acc(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def evaluate(predictor: Callable[[Sequence[TokenSequence]], np.ndarray],
             test: Sequence[TokenSequence]) -> MetricsReport:
    pred = np.asarray(predictor(test))
    truth = np.array([s.label for s in test])
    return MetricsReport(
        tp=int(np.sum((pred == STEGO) & (truth == STEGO))),
        fp=int(np.sum((pred == STEGO) & (truth == CARRIER))),
        fn=int(np.sum((pred == CARRIER) & (truth == STEGO))),
        tn=int(np.sum((pred == CARRIER) & (truth == CARRIER))),
    )


# --------------------------------------------------------------------------
# LSTM classifier
# --------------------------------------------------------------------------

def init_classifier(mode: str, config: ModelConfig, seed: int, source=None) -> ModelParams:
    """Random init, or embedding + LSTM copied from an LM / AE checkpoint.

    The 2-way head is always freshly drawn from ``seed``.
    """
    if mode not in INIT_MODES:
        raise ConfigError(f"unknown init mode {mode!r}")
    params = ModelParams.init(config, seed, head="fc")
    if mode == "random":
        return params
    if source is None:
        raise ConfigError(f"{mode} needs a source checkpoint")
    src = source if isinstance(source, ModelParams) else load_checkpoint(source)[0]
    sc = src.config
    if (sc.vocab_size, sc.embed_dim, sc.hidden_dim, sc.layers) != (
            config.vocab_size, config.embed_dim, config.hidden_dim, config.layers):
        raise CheckpointError("checkpoint shapes do not match the classifier config")
    for name in params.names():
        if not name.startswith("fc."):
            params.blocks[name] = ParamBlock(src[name].value.copy())
    return params


class ClsTask:
    head = "fc"
    stage = "finetune"

    def loss(self, params, batch, rng=None, grad=True):
        return cls_objective(params, batch.ids, batch.token_mask, batch.labels, rng, grad)


def finetune(classifier: ModelParams, train: Sequence[TokenSequence], val: Sequence[TokenSequence],
             seed: int, epochs: int = 50, batch_size: int = 128, lr: float = 1e-3,
             patience: Optional[int] = 5, dropout: bool = True, run_full: bool = True,
             log=None) -> TrainHistory:
    """Supervised training of the whole classifier; returns the best-validation model."""
    if len({s.label for s in train}) < 2:
        raise ConfigError("fine-tuning needs both classes in the training set")
    params = classifier
    if not dropout:
        cfg = dataclasses.replace(classifier.config, dropout_keep=1.0)
        params = ModelParams(cfg, classifier.blocks, classifier.head)
    return train_loop(params, ClsTask(), train, val, seed=seed, epochs=epochs,
                      batch_size=batch_size, lr=lr, patience=patience, run_full=run_full, log=log)


def stego_probabilities(params: ModelParams, sequences: Sequence[TokenSequence],
                        batch_size: int = 256) -> np.ndarray:
    """Softmax outputs (N, 2) in input order."""
    lin = fixed_linear(params)
    out = []
    for batch in make_batches(sequences, batch_size):
        h = final_hidden(params, batch.ids, batch.token_mask, lin)[-1][0]
        out.append(softmax_rows(lin(h, "fc.W") + params["fc.b"].value))
    return np.concatenate(out) if out else np.zeros((0, 2))


def labels_from_probs(probs: np.ndarray) -> np.ndarray:
    # exact 0.5/0.5 ties go to carrier
    return np.where(probs[:, STEGO] > probs[:, CARRIER], STEGO, CARRIER)


def classify(params: ModelParams, sequence: TokenSequence) -> tuple[int, np.ndarray]:
    probs = stego_probabilities(params, [sequence])
    return int(labels_from_probs(probs)[0]), probs[0]


def classifier_predictor(params: ModelParams):
    return lambda seqs: labels_from_probs(stego_probabilities(params, seqs))


# --------------------------------------------------------------------------
# perplexity threshold
# --------------------------------------------------------------------------

GREATER, LESS = "greater-is-stego", "less-is-stego"


@dataclass
class ThresholdDetector:
    tau: float
    direction: str
    val_acc: float = float("nan")

    def predict_scores(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        hit = s > self.tau if self.direction == GREATER else s < self.tau
        return np.where(hit, STEGO, CARRIER)


def threshold_accuracy(scores, labels, tau: float, direction: str) -> float:
    pred = ThresholdDetector(tau, direction).predict_scores(scores)
    return float(np.mean(pred == np.asarray(labels)))


def fit_threshold(scores, labels) -> ThresholdDetector:
    """Best validation accuracy over midpoints of sorted unique scores, both directions.

    Ties keep the smaller threshold, then greater-is-stego.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if len(set(y.tolist())) < 2:
        raise ConfigError("threshold fitting needs both classes")
    uniq = np.unique(s)
    cands = (uniq[:-1] + uniq[1:]) / 2.0 if uniq.size > 1 else uniq
    stego = (y == STEGO)
    above = s[None, :] > cands[:, None]
    below = s[None, :] < cands[:, None]
    acc_g = np.mean(above == stego[None, :], axis=1)
    acc_l = np.mean(below == stego[None, :], axis=1)
    best = None
    for k, tau in enumerate(cands):
        for direction, acc in ((GREATER, acc_g[k]), (LESS, acc_l[k])):
            if best is None or acc > best.val_acc:
                best = ThresholdDetector(float(tau), direction, float(acc))
    return best
