"""Mini-batch Adam loop shared by LM, autoencoder and classifier training."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .corpus import make_batches
from .lstm import CLIP_NORM, ModelParams, clip_grad_norm
from .numkernel import Rng, adam_step, derive_seed


@dataclass
class TrainHistory:
    params: ModelParams                 # best-validation weights
    train_loss: list = field(default_factory=list)   # index e-1 -> epoch e
    val_loss: list = field(default_factory=list)     # index 0 -> before training
    best_epoch: int = 0
    stopped_epoch: Optional[int] = None
    epochs_ran: int = 0
    final_params: Optional[ModelParams] = None

    def epochs_to_reach(self, threshold: float) -> Optional[int]:
        for e, v in enumerate(self.val_loss):
            if v <= threshold:
                return e
        return None


def mean_loss(task, params: ModelParams, sequences, batch_size: int) -> float:
    total = count = 0.0
    for batch in make_batches(sequences, batch_size):
        loss, n, _ = task.loss(params, batch, None, grad=False)
        total += loss * n
        count += n
    return total / count if count else float("nan")


def train_loop(params: ModelParams, task, train, val, *, seed: int, epochs: int,
               batch_size: int = 128, lr: float = 1e-3, clip: float = CLIP_NORM,
               patience: Optional[int] = None, run_full: bool = False,
               log=None) -> TrainHistory:
    """Train ``params`` in place.

    With ``patience`` set, training stops once validation loss has not improved
    for that many epochs; ``run_full`` keeps going to ``epochs`` anyway (the
    returned ``params`` is still the best model up to the stopping point, and
    ``final_params`` holds the last-epoch weights).
    """
    hist = TrainHistory(params=params)
    score = (lambda: mean_loss(task, params, val, batch_size)) if val else None
    best_val = score() if score else float("inf")
    hist.val_loss.append(best_val)
    best_values = params.values_copy()
    frozen = False
    for epoch in range(1, epochs + 1):
        rng = Rng(derive_seed(seed, f"epoch:{epoch}"))
        drop_rng = rng.child("dropout")
        total = count = 0.0
        for batch in make_batches(train, batch_size, seed=derive_seed(rng.seed, "shuffle")):
            params.zero_grad()
            loss, n, _ = task.loss(params, batch, drop_rng, grad=True)
            clip_grad_norm(params, clip)
            for block in params.blocks.values():
                adam_step(block, lr)
            total += loss * n
            count += n
        hist.train_loss.append(total / count if count else float("nan"))
        v = score() if score else hist.train_loss[-1]
        hist.val_loss.append(v)
        hist.epochs_ran = epoch
        if log:
            log(f"epoch {epoch}: train {hist.train_loss[-1]:.4f} val {v:.4f}")
        if not frozen and v < best_val:
            best_val, hist.best_epoch = v, epoch
            best_values = params.values_copy()
        if not frozen and patience is not None and epoch - hist.best_epoch >= patience:
            hist.stopped_epoch = epoch
            frozen = True
            if not run_full:
                break
    params.zero_grad()
    if run_full:
        hist.final_params = params.copy()
    best = params.copy()
    best.load_values(best_values)
    hist.params = best
    return hist
