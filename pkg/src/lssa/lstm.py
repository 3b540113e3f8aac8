"""Embedding + stacked LSTM + projection heads, with hand-written BPTT.

Arrays inside the recurrence are time-major: ``(T, B, features)``.
Gate order in every ``W``/``U``/``b`` is (input, forget, cell, output).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import CheckpointError, ConfigError, StateError
from .numkernel import ParamBlock, Rng, derive_seed, matmul, softmax_rows

INIT_SCALE = 0.08
CLIP_NORM = 5.0
MAGIC = b"LSSA1\n"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 128
    hidden_dim: int = 256
    layers: int = 2
    dropout_keep: float = 0.5

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.hidden_dim, self.layers) < 1:
            raise ConfigError("vocab_size, embed_dim, hidden_dim and layers must be >= 1")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError("dropout_keep must lie in (0, 1]")


def head_size(config: ModelConfig, head: Optional[str]) -> int:
    return {"lm": config.vocab_size, "fc": 2}[head]


def param_shapes(config: ModelConfig, head: Optional[str]) -> list[tuple[str, tuple]]:
    V, E, H = config.vocab_size, config.embed_dim, config.hidden_dim
    shapes = [("embedding", (V, E))]
    for l in range(config.layers):
        in_dim = E if l == 0 else H
        shapes += [(f"lstm{l}.W", (4 * H, in_dim)), (f"lstm{l}.U", (4 * H, H)),
                   (f"lstm{l}.b", (4 * H,))]
    if head is not None:
        shapes += [(f"{head}.W", (head_size(config, head), H)), (f"{head}.b", (head_size(config, head),))]
    return shapes


class ModelParams:
    """Named ParamBlocks in a fixed order, plus the config that shaped them."""

    def __init__(self, config: ModelConfig, blocks: dict, head: Optional[str]):
        self.config = config
        self.head = head
        self.blocks = blocks
        expected = param_shapes(config, head)
        if [(n, tuple(blocks[n].shape)) for n, _ in expected] != expected or len(blocks) != len(expected):
            raise CheckpointError("parameter names/shapes do not match the config")

    @classmethod
    def init(cls, config: ModelConfig, seed: int, head: Optional[str] = "lm",
             scale: float = INIT_SCALE) -> "ModelParams":
        # Each tensor draws from its own sub-stream, so the LSTM part is the
        # same whichever head is attached.
        blocks = {}
        H = config.hidden_dim
        for name, shape in param_shapes(config, head):
            value = Rng(derive_seed(seed, f"init:{name}")).uniform(shape, -scale, scale)
            if name.startswith("lstm") and name.endswith(".b"):
                value[:] = 0.0
                value[H:2 * H] = 1.0
            elif name.endswith(".b"):
                value[:] = 0.0
            blocks[name] = ParamBlock(value)
        return cls(config, blocks, head)

    def __getitem__(self, name: str) -> ParamBlock:
        return self.blocks[name]

    def names(self) -> list[str]:
        return list(self.blocks)

    def items(self):
        return self.blocks.items()

    def zero_grad(self) -> None:
        for b in self.blocks.values():
            b.grad.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(b.grad * b.grad)) for b in self.blocks.values())))

    def values_copy(self) -> dict:
        return {n: b.value.copy() for n, b in self.blocks.items()}

    def load_values(self, values: dict) -> None:
        for n, v in values.items():
            self.blocks[n].value[...] = v

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {n: b.copy() for n, b in self.blocks.items()}, self.head)


def clip_grad_norm(params: ModelParams, max_norm: float = CLIP_NORM) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = params.grad_norm()
    if norm > max_norm:
        scale = max_norm / norm
        for b in params.blocks.values():
            b.grad *= scale
    return norm


# --------------------------------------------------------------------------
# linear maps: x @ W.T
# --------------------------------------------------------------------------

Linear = Callable[[np.ndarray, str], np.ndarray]


def blas_linear(params: ModelParams) -> Linear:
    def lin(x, name):
        return x @ params[name].value.T
    return lin


def fixed_linear(params: ModelParams) -> Linear:
    """Batch-invariant linear map; weights are snapshotted on first use."""
    transposed: dict = {}

    def lin(x, name):
        wt = transposed.get(name)
        if wt is None:
            wt = transposed[name] = np.ascontiguousarray(params[name].value.T)
        return matmul(x, wt)
    return lin


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class LayerCache:
    x: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c_prev: np.ndarray
    c_new: np.ndarray
    h_prev: np.ndarray


@dataclass
class ForwardCache:
    ids: np.ndarray          # (B, T)
    mask: np.ndarray         # (B, T)
    drop: Optional[np.ndarray]
    layers: list = field(default_factory=list)
    outputs: np.ndarray = None            # (T, B, H) top-layer h after masking
    final: list = field(default_factory=list)  # per layer (h, c)


def zero_state(config: ModelConfig, batch: int) -> list:
    H = config.hidden_dim
    return [(np.zeros((batch, H)), np.zeros((batch, H))) for _ in range(config.layers)]


def lstm_cell(lin: Linear, layer: int, xw: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One LSTM step given the precomputed input projection ``xw = x W^T + b``."""
    H = h.shape[1]
    z = xw + lin(h, f"lstm{layer}.U")
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = _sigmoid(z[:, 3 * H:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return i, f, g, o, c_new, h_new


def embed_lookup(params: ModelParams, ids: np.ndarray) -> np.ndarray:
    V = params.config.vocab_size
    if ids.size and (ids.max() >= V or ids.min() < 0):
        raise IndexError(f"token id out of range for vocab of size {V}")
    return params["embedding"].value[ids.T]


def forward_sequence(params: ModelParams, ids: np.ndarray, mask: np.ndarray,
                     rng: Optional[Rng] = None, init_state: Optional[list] = None,
                     lin: Optional[Linear] = None) -> ForwardCache:
    """Run the stacked LSTM over right-padded ``ids``; PAD steps freeze the state.

    Dropout on the embedding output is applied only when ``rng`` is given.
    """
    cfg = params.config
    lin = lin or blas_linear(params)
    B, T = ids.shape
    x = embed_lookup(params, ids)
    drop = None
    if rng is not None and cfg.dropout_keep < 1.0:
        drop = (rng.uniform((T, B, cfg.embed_dim)) < cfg.dropout_keep) / cfg.dropout_keep
        x = x * drop
    state = init_state if init_state is not None else zero_state(cfg, B)
    cache = ForwardCache(ids, mask, drop)
    keep = mask.T[:, :, None] > 0          # (T, B, 1)
    H = cfg.hidden_dim
    for l in range(cfg.layers):
        xw = lin(x.reshape(T * B, -1), f"lstm{l}.W").reshape(T, B, 4 * H) + params[f"lstm{l}.b"].value
        h, c = state[l]
        arrs = {k: np.empty((T, B, H)) for k in ("i", "f", "g", "o", "c_prev", "c_new", "h_prev")}
        out = np.empty((T, B, H))
        for t in range(T):
            i, f, g, o, c_new, h_new = lstm_cell(lin, l, xw[t], h, c)
            arrs["i"][t], arrs["f"][t], arrs["g"][t], arrs["o"][t] = i, f, g, o
            arrs["c_prev"][t], arrs["c_new"][t], arrs["h_prev"][t] = c, c_new, h
            h = np.where(keep[t], h_new, h)
            c = np.where(keep[t], c_new, c)
            out[t] = h
        cache.layers.append(LayerCache(x=x, **arrs))
        cache.final.append((h, c))
        x = out
    cache.outputs = x
    return cache


def backward_sequence(params: ModelParams, cache: Optional[ForwardCache],
                      d_outputs: Optional[np.ndarray] = None,
                      d_final: Optional[list] = None) -> list:
    """Accumulate parameter gradients; return gradients w.r.t. the initial state.

    ``d_outputs`` is dLoss/d(top-layer h_t) for every t, ``d_final`` the
    per-layer (dh, dc) w.r.t. the final state. Clipping is left to the caller.
    """
    if cache is None or not cache.layers:
        raise StateError("backward_sequence needs a cached forward pass")
    cfg = params.config
    H = cfg.hidden_dim
    T, B = cache.outputs.shape[:2]
    keep = cache.mask.T[:, :, None]
    dx_above = d_outputs if d_outputs is not None else np.zeros((T, B, H))
    d_init = [None] * cfg.layers
    for l in reversed(range(cfg.layers)):
        lc = cache.layers[l]
        U = params[f"lstm{l}.U"].value
        if d_final is not None and d_final[l] is not None:
            dh_next, dc_next = (np.array(a, dtype=np.float64) for a in d_final[l])
        else:
            dh_next, dc_next = np.zeros((B, H)), np.zeros((B, H))
        dZ = np.empty((T, B, 4 * H))
        for t in reversed(range(T)):
            m = keep[t]
            dh = dx_above[t] + dh_next
            dh_new, dh_skip = dh * m, dh * (1.0 - m)
            dc_new, dc_skip = dc_next * m, dc_next * (1.0 - m)
            i, f, g, o = lc.i[t], lc.f[t], lc.g[t], lc.o[t]
            tc = np.tanh(lc.c_new[t])
            do = dh_new * tc
            dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
            di = dc_new * g
            dg = dc_new * i
            df = dc_new * lc.c_prev[t]
            dz = dZ[t]
            dz[:, :H] = di * i * (1.0 - i)
            dz[:, H:2 * H] = df * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dg * (1.0 - g * g)
            dz[:, 3 * H:] = do * o * (1.0 - o)
            dh_next = dz @ U + dh_skip
            dc_next = dc_new * f + dc_skip
        d_init[l] = (dh_next, dc_next)
        dZf = dZ.reshape(T * B, 4 * H)
        xf = lc.x.reshape(T * B, -1)
        params[f"lstm{l}.W"].grad += dZf.T @ xf
        params[f"lstm{l}.U"].grad += dZf.T @ lc.h_prev.reshape(T * B, H)
        params[f"lstm{l}.b"].grad += dZf.sum(axis=0)
        dx_above = (dZf @ params[f"lstm{l}.W"].value).reshape(T, B, -1)
    dx = dx_above if cache.drop is None else dx_above * cache.drop
    np.add.at(params["embedding"].grad, cache.ids.T, dx)
    return d_init


# --------------------------------------------------------------------------
# heads
# --------------------------------------------------------------------------

def _head_logits(params, head, h, lin):
    return lin(h, f"{head}.W") + params[f"{head}.b"].value


def lm_objective(params: ModelParams, ids: np.ndarray, target_mask: np.ndarray,
                 rng: Optional[Rng] = None, init_state=None, grad: bool = True):
    """Mean next-token cross-entropy over scored positions.

    ``ids`` is the full BOS..EOS batch; inputs are ``ids[:, :-1]`` and targets
    ``ids[:, 1:]``. Returns (mean_loss, count, d_init_state or None).
    """
    cache = forward_sequence(params, ids[:, :-1], target_mask, rng, init_state)
    T, B, H = cache.outputs.shape
    m = target_mask.T.reshape(-1)
    rows = np.nonzero(m > 0)[0]
    count = float(rows.size)
    if count == 0:
        return 0.0, 0.0, None
    h = cache.outputs.reshape(T * B, H)[rows]
    tgt = ids[:, 1:].T.reshape(-1)[rows]
    logits = h @ params["lm.W"].value.T
    logits += params["lm.b"].value
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    z = e.sum(axis=1)
    idx = np.arange(rows.size)
    loss = float(np.sum(np.log(z) - logits[idx, tgt]) / count)
    if not grad:
        return loss, count, None
    e /= (z * count)[:, None]
    e[idx, tgt] -= 1.0 / count
    params["lm.W"].grad += e.T @ h
    params["lm.b"].grad += e.sum(axis=0)
    d_out = np.zeros((T * B, H))
    d_out[rows] = e @ params["lm.W"].value
    return loss, count, backward_sequence(params, cache, d_out.reshape(T, B, H))


def cls_objective(params: ModelParams, ids: np.ndarray, token_mask: np.ndarray,
                  labels: np.ndarray, rng: Optional[Rng] = None, grad: bool = True):
    """Mean cross-entropy of the 2-way head on the last hidden vector."""
    cache = forward_sequence(params, ids, token_mask, rng)
    h = cache.final[-1][0]
    logits = _head_logits(params, "fc", h, blas_linear(params))
    B = h.shape[0]
    shift = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(lse - shift[rows, labels]))
    if not grad:
        return loss, float(B), None
    d = np.exp(shift - lse[:, None])
    d[rows, labels] -= 1.0
    d /= B
    params["fc.W"].grad += d.T @ h
    params["fc.b"].grad += d.sum(axis=0)
    d_final = [None] * params.config.layers
    d_final[-1] = (d @ params["fc.W"].value, np.zeros_like(h))
    backward_sequence(params, cache, None, d_final)
    return loss, float(B), None


# --------------------------------------------------------------------------
# inference helpers (fixed-order kernel, batch invariant)
# --------------------------------------------------------------------------

def lm_probabilities(params: ModelParams, ids: np.ndarray, mask: np.ndarray,
                     lin: Optional[Linear] = None) -> np.ndarray:
    """Next-token distributions after every input position: (B, T, V)."""
    lin = lin or fixed_linear(params)
    cache = forward_sequence(params, ids, mask, None, None, lin)
    T, B, H = cache.outputs.shape
    probs = softmax_rows(_head_logits(params, "lm", cache.outputs.reshape(T * B, H), lin))
    return probs.reshape(T, B, -1).transpose(1, 0, 2)


def final_hidden(params: ModelParams, ids: np.ndarray, mask: np.ndarray,
                 lin: Optional[Linear] = None) -> list:
    lin = lin or fixed_linear(params)
    return forward_sequence(params, ids, mask, None, None, lin).final


class Stepper:
    """Advance the LM one token at a time for a batch of generation streams."""

    def __init__(self, params: ModelParams, batch: int):
        self.params = params
        self.lin = fixed_linear(params)
        self.state = zero_state(params.config, batch)

    def step(self, token_ids: np.ndarray) -> np.ndarray:
        p = self.params
        x = embed_lookup(p, np.asarray(token_ids, dtype=np.int64)[:, None])[0]
        new_state = []
        for l, (h, c) in enumerate(self.state):
            xw = self.lin(x, f"lstm{l}.W") + p[f"lstm{l}.b"].value
            _, _, _, _, c, h = lstm_cell(self.lin, l, xw, h, c)
            new_state.append((h, c))
            x = h
        self.state = new_state
        return softmax_rows(_head_logits(p, "lm", x, self.lin))


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, seed: int, stage: str,
                    extra: Optional[dict] = None) -> None:
    cfg = params.config
    header = {
        "version": CHECKPOINT_VERSION, "V": cfg.vocab_size, "E": cfg.embed_dim,
        "H": cfg.hidden_dim, "L": cfg.layers, "dropout_keep": cfg.dropout_keep,
        "head": params.head, "params": [[n, list(b.shape)] for n, b in params.items()],
        "seed": int(seed), "stage": stage, "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, b in params.items():
            fh.write(np.ascontiguousarray(b.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic bytes")
    nl = data.index(b"\n", len(MAGIC))
    try:
        header = json.loads(data[len(MAGIC):nl].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    cfg = ModelConfig(header["V"], header["E"], header["H"], header["L"], header["dropout_keep"])
    offset = nl + 1
    blocks = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated at {name}")
        blocks[name] = ParamBlock(np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64))
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    return ModelParams(cfg, blocks, header["head"]), header


# --------------------------------------------------------------------------
# finite-difference gradient check
# --------------------------------------------------------------------------

def _random_sequences(rng: Rng, vocab_size: int, count: int, min_len: int, max_len: int):
    from .corpus import BOS, EOS, N_SPECIALS, TokenSequence
    seqs = []
    for k in range(count):
        n = min_len + rng.randbelow(max_len - min_len + 1)
        body = [N_SPECIALS + rng.randbelow(vocab_size - N_SPECIALS) for _ in range(n)]
        seqs.append(TokenSequence([BOS] + body + [EOS], label=k % 2))
    return seqs


def grad_check(config: ModelConfig, seed: int = 0, eps: float = 1e-5, objective: str = "lm",
               batch_size: int = 4, scale: float = 0.3, sequences=None) -> float:
    """Max relative error between BPTT gradients and central differences.

    For each parameter tensor the error is ``|a - n| / max(1e-8, |a| + |n|)``
    with L2 norms over the tensor's coordinates; the worst tensor is returned.
    Dropout is disabled. ``objective`` is ``"lm"``, ``"ae"`` or ``"cls"``.
    """
    from .corpus import pad_batch

    rng = Rng(derive_seed(seed, "gradcheck"))
    if sequences is None:
        sequences = _random_sequences(rng, config.vocab_size, batch_size, 2, 6)
    if not sequences:
        warnings.warn("grad_check on an empty batch; reporting 0")
        return 0.0
    batch = pad_batch(sequences)
    head = "fc" if objective == "cls" else "lm"
    params = ModelParams.init(config, seed, head=head, scale=scale)
    for name, b in params.items():
        if name.endswith(".b"):
            b.value[:] = Rng(derive_seed(seed, f"bias:{name}")).uniform(b.shape, -scale, scale)

    if objective == "lm":
        def run(grad):
            return lm_objective(params, batch.ids, batch.target_mask, grad=grad)[0]
    elif objective == "cls":
        def run(grad):
            return cls_objective(params, batch.ids, batch.token_mask, batch.labels, grad=grad)[0]
    elif objective == "ae":
        from .autoencoder import ae_objective

        def run(grad):
            return ae_objective(params, batch, grad=grad)[0]
    else:
        raise ConfigError(f"unknown objective {objective!r}")

    params.zero_grad()
    run(True)
    worst = 0.0
    for name, block in params.items():
        analytic = block.grad.reshape(-1).copy()
        numeric = np.empty_like(analytic)
        flat = block.value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = run(False)
            flat[k] = orig - eps
            down = run(False)
            flat[k] = orig
            numeric[k] = (up - down) / (2 * eps)
        err = np.linalg.norm(analytic - numeric) / max(1e-8, np.linalg.norm(analytic) + np.linalg.norm(numeric))
        worst = max(worst, float(err))
    params.zero_grad()
    return worst
