"""Numeric primitives: fixed-order matmul, softmax / cross-entropy, Adam, SplitMix64.

Matrices are plain ``numpy.float64`` arrays. Two matmul routes exist:

* :func:`matmul` sums every output element in ascending-k order (the naive
  triple loop), so a row of the result never depends on which other rows are
  in the batch. All scoring, generation and classification go through it.
* Training uses BLAS (``@``) for speed. Single-threaded BLAS is run-to-run
  deterministic for fixed shapes, which is all training needs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ShapeError

PROB_FLOOR = 1e-12

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


# --------------------------------------------------------------------------
# matrices
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def _matmul_ikj(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed ascending-k summation order per element."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = _matmul_ikj(np.ascontiguousarray(a), np.ascontiguousarray(b))
    if not np.isfinite(out).all():
        raise FloatingPointError("matmul produced non-finite entries")
    return out


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis with max subtraction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_row(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError("softmax_row needs a non-empty vector")
    return softmax_rows(x)


def cross_entropy(probs, target: int) -> float:
    """Natural-log cross-entropy of one distribution against a class index."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < p.shape[-1]:
        raise IndexError(f"target {target} out of range for {p.shape[-1]} classes")
    return float(-np.log(max(p[target], PROB_FLOOR)))


# --------------------------------------------------------------------------
# optimizer state
# --------------------------------------------------------------------------

@dataclass
class ParamBlock:
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    adam_m: np.ndarray = field(default=None)
    adam_v: np.ndarray = field(default=None)
    step: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        for name in ("grad", "adam_m", "adam_v"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.value))

    @property
    def shape(self):
        return self.value.shape

    def copy(self) -> "ParamBlock":
        return ParamBlock(self.value.copy(), self.grad.copy(), self.adam_m.copy(),
                          self.adam_v.copy(), self.step)


def adam_step(block: ParamBlock, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> ParamBlock:
    """In-place bias-corrected Adam update; zeroes the gradient afterwards."""
    shape = block.value.shape
    if not (block.grad.shape == block.adam_m.shape == block.adam_v.shape == shape):
        raise ShapeError("ParamBlock buffers disagree in shape")
    g = block.grad
    block.step += 1
    t = block.step
    block.adam_m *= beta1
    block.adam_m += (1.0 - beta1) * g
    block.adam_v *= beta2
    block.adam_v += (1.0 - beta2) * (g * g)
    m_hat = block.adam_m / (1.0 - beta1 ** t)
    v_hat = block.adam_v / (1.0 - beta2 ** t)
    block.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    block.grad.fill(0.0)
    return block


# --------------------------------------------------------------------------
# SplitMix64
# --------------------------------------------------------------------------

def splitmix64_mix(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "big")


def derive_seed(master: int, tag: str) -> int:
    """Sub-seed = first SplitMix64 output seeded with ``master XOR hash(tag)``."""
    return splitmix64_mix(((master ^ tag_hash(tag)) + _GAMMA) & _MASK64)


class Rng:
    """SplitMix64 stream. Array draws are vectorised but equal the scalar stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.state = self.seed

    def child(self, tag: str) -> "Rng":
        return Rng(derive_seed(self.seed, tag))

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        return splitmix64_mix(self.state)

    def u64(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        k = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + k * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * u).reshape(shape)

    def randbelow(self, n: int) -> int:
        return int(self.random() * n)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.u64(n), kind="stable")

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` indices drawn with replacement from ``range(n)``."""
        return (self.uniform(size) * n).astype(np.int64)


# --------------------------------------------------------------------------
# bit streams
# --------------------------------------------------------------------------

@dataclass
class BitStream:
    bits: list = field(default_factory=list)
    cursor: int = 0

    def __len__(self):
        return len(self.bits)

    @property
    def remaining(self) -> int:
        return len(self.bits) - self.cursor

    def read(self, k: int) -> tuple[list, int]:
        """Read ``k`` bits, zero-padding past the end; returns (bits, real_count)."""
        take = self.bits[self.cursor:self.cursor + k]
        self.cursor += len(take)
        real = len(take)
        return list(take) + [0] * (k - real), real

    def read_int(self, k: int) -> tuple[int, int]:
        bits, real = self.read(k)
        value = 0
        for bit in bits:
            value = (value << 1) | bit
        return value, real

    def to_bytes(self) -> bytes:
        out = bytearray()
        for start in range(0, len(self.bits), 8):
            chunk = self.bits[start:start + 8]
            chunk = chunk + [0] * (8 - len(chunk))
            byte = 0
            for bit in chunk:
                byte = (byte << 1) | bit
            out.append(byte)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitStream":
        return cls([(byte >> (7 - i)) & 1 for byte in data for i in range(8)])

    @classmethod
    def from_string(cls, s: str) -> "BitStream":
        return cls([int(c) for c in s if c in "01"])

    def __str__(self):
        return "".join(map(str, self.bits))


def rng_bits(rng: Rng, n: int) -> BitStream:
    """``n`` payload bits: successive 64-bit words, each MSB first."""
    if n <= 0:
        return BitStream([])
    words = rng.u64((n + 63) // 64)
    bits = []
    for w in words.tolist():
        bits.extend((w >> (63 - i)) & 1 for i in range(64))
    return BitStream(bits[:n])
