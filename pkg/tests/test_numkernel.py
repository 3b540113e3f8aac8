from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lssa.errors import ShapeError
from lssa.numkernel import (BitStream, ParamBlock, Rng, adam_step, cross_entropy, derive_seed, matmul,
                            rng_bits, softmax_row, softmax_rows)
from oracles import adam_reference, naive_matmul, splitmix64_stream

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- matmul

def test_matmul_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), a), a)
    assert np.array_equal(matmul(a, np.zeros((2, 2))), np.zeros((2, 2)))
    assert np.array_equal(matmul(a, np.array([[5.0, 6.0], [7.0, 8.0]])), [[19, 22], [43, 50]])


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        matmul(np.ones(3), np.ones((3, 1)))


def test_matmul_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        matmul(np.array([[np.inf]]), np.array([[1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.data())
def test_matmul_equals_naive_loop(n, k, m, data):
    a = data.draw(arrays(np.float64, (n, k), elements=finite))
    b = data.draw(arrays(np.float64, (k, m), elements=finite))
    # bit-for-bit: same summation order as the triple loop
    assert matmul(a, b).tolist() == naive_matmul(a.tolist(), b.tolist())


def test_matmul_rows_do_not_depend_on_batch():
    rng = Rng(3)
    a = rng.uniform((37, 64), -1, 1)
    b = rng.uniform((64, 50), -1, 1)
    full = matmul(a, b)
    for r in (0, 5, 36):
        assert np.array_equal(matmul(a[r:r + 1], b)[0], full[r])


# ---------------------------------------------------------------- softmax / CE

def test_softmax_examples():
    assert np.allclose(softmax_row([0.0, 0.0]), [0.5, 0.5])
    for c in (-3.0, 0.0, 17.5):
        assert np.allclose(softmax_row([c, c + math.log(3)]), [0.25, 0.75])
    big = softmax_row([1000.0, 1001.0])
    assert np.isfinite(big).all() and np.allclose(big, softmax_row([0.0, 1.0]))


def test_softmax_empty_raises():
    with pytest.raises(ShapeError):
        softmax_row([])


@given(arrays(np.float64, (3, 5), elements=finite))
def test_softmax_rows_normalised(x):
    p = softmax_rows(x)
    assert np.allclose(p.sum(axis=1), 1.0) and (p > 0).all()


def test_cross_entropy_examples():
    assert cross_entropy([0.0, 1.0, 0.0], 1) == 0.0
    assert cross_entropy([0.5, 0.5], 0) == pytest.approx(0.693147, abs=1e-6)
    assert cross_entropy([0.1, 0.9], 0) == pytest.approx(2.302585, abs=1e-6)
    with pytest.raises(IndexError):
        cross_entropy([0.5, 0.5], 2)


# ---------------------------------------------------------------- Adam

def test_adam_zero_grad_leaves_value():
    b = ParamBlock(np.array([1.5, -2.0]))
    adam_step(b)
    assert np.array_equal(b.value, [1.5, -2.0])


def test_adam_first_step_magnitude():
    b = ParamBlock(np.array([0.0]))
    b.grad[:] = 1.0
    adam_step(b, lr=1e-3)
    assert b.value[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert b.grad[0] == 0.0


def test_adam_matches_reference_recurrence():
    rng = Rng(11)
    grads = [rng.uniform(4, -1, 1).tolist() for _ in range(7)]
    b = ParamBlock(np.array([0.3, -0.1, 2.0, 0.0]))
    for g in grads:
        b.grad[:] = g
        adam_step(b, lr=0.01)
    assert np.allclose(b.value, adam_reference([0.3, -0.1, 2.0, 0.0], grads, lr=0.01), rtol=0, atol=1e-14)


def test_adam_identical_blocks_identical_results():
    a, b = ParamBlock(np.ones(3)), ParamBlock(np.ones(3))
    for blk in (a, b):
        blk.grad[:] = [0.1, -0.2, 0.3]
        adam_step(blk)
    assert np.array_equal(a.value, b.value)


def test_adam_shape_mismatch():
    b = ParamBlock(np.ones(3))
    b.grad = np.ones(2)
    with pytest.raises(ShapeError):
        adam_step(b)


# ---------------------------------------------------------------- SplitMix64

def test_reference_splitmix_known_value():
    # published first output for seed 0
    assert splitmix64_stream(0, 1)[0] == 0xE220A8397B1DCDAF


@given(st.integers(0, 2**64 - 1), st.integers(1, 40))
def test_rng_matches_reference(seed, n):
    ref = splitmix64_stream(seed, n)
    assert Rng(seed).u64(n).tolist() == ref
    r = Rng(seed)
    assert [r.next_u64() for _ in range(n)] == ref


def test_vectorised_and_scalar_draws_interleave():
    a, b = Rng(9), Rng(9)
    first = a.u64(5).tolist() + [a.next_u64()]
    assert first == [b.next_u64() for _ in range(6)]


def test_rng_bits_examples():
    assert rng_bits(Rng(1), 0).bits == []
    assert rng_bits(Rng(1), 64).bits == rng_bits(Rng(1), 64).bits
    seed = 123456789
    word = splitmix64_stream(seed, 2)
    ref = [(w >> (63 - i)) & 1 for w in word for i in range(64)]
    assert rng_bits(Rng(seed), 100).bits == ref[:100]


def test_derive_seed_distinct_tags():
    seeds = {derive_seed(7, t) for t in ("a", "b", "init:embedding", "epoch:1")}
    assert len(seeds) == 4
    assert derive_seed(7, "a") == derive_seed(7, "a")


def test_permutation_and_uniform():
    p = Rng(4).permutation(50)
    assert sorted(p.tolist()) == list(range(50))
    u = Rng(4).uniform((1000,), -0.08, 0.08)
    assert u.min() >= -0.08 and u.max() < 0.08


# ---------------------------------------------------------------- BitStream

def test_bitstream_padding_and_bytes():
    s = BitStream([1, 0, 1])
    assert s.read(2) == ([1, 0], 2)
    assert s.read(3) == ([1, 0, 0], 1)
    assert s.remaining == 0
    assert BitStream.from_bytes(b"\xa5").bits == [1, 0, 1, 0, 0, 1, 0, 1]
    assert BitStream([1, 0, 1, 0, 0, 1, 0, 1, 1]).to_bytes() == b"\xa5\x80"
    assert BitStream([1, 1, 0]).read_int(3) == (6, 3)
