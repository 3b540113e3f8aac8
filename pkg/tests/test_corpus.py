from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lssa.corpus import (BOS, EOS, MAX_LEN, PAD, UNK, TokenSequence, Vocab, build_vocab, encode_texts,
                         make_batches, pad_batch, read_corpus, split_dataset, tokenize, write_corpus)
from lssa.errors import ConfigError
from conftest import random_sequences


def test_tokenize_examples():
    assert tokenize("") == []
    assert tokenize("Hello, world!") == ["hello", ",", "world", "!"]
    assert tokenize("a a a") == ["a", "a", "a"]
    assert tokenize("  Don't\tstop…") == ["don", "'", "t", "stop", "…"]


def test_vocab_frequency_order():
    v = build_vocab([["a", "a", "b", "a"]], cap=6)
    assert v.id_of == {"<pad>": 0, "<unk>": 1, "<bos>": 2, "<eos>": 3, "a": 4, "b": 5}


def test_vocab_tie_break_and_unk():
    v = build_vocab([["b", "a"]], cap=5)
    assert v.token_of[4] == "a"
    assert v.encode(["b"]) == [BOS, UNK, EOS]


def test_empty_corpus_vocab():
    assert len(build_vocab([], cap=10)) == 4


def test_vocab_cap_validation():
    with pytest.raises(ConfigError):
        build_vocab([["a"]], cap=4)


def test_encode_truncates_keeping_eos():
    v = build_vocab([["x"]], cap=5)
    ids = v.encode(["x"] * 100)
    assert len(ids) == MAX_LEN and ids[0] == BOS and ids[-1] == EOS
    assert v.decode(ids) == ["x"] * (MAX_LEN - 2)


def test_vocab_save_load(tmp_path):
    v = build_vocab([tokenize("the cat sat on the mat .")], cap=50)
    v.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt") == v


def test_corpus_io(tmp_path):
    write_corpus(tmp_path / "c.txt", ["one two", "three"])
    assert read_corpus(tmp_path / "c.txt") == ["one two", "three"]


def _labelled(n, n_pos):
    return [TokenSequence([BOS, 4, EOS], int(i < n_pos), f"r{i}") for i in range(n)]


def test_split_sizes_63_7_30():
    sp = split_dataset(_labelled(1000, 500), seed=1)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (630, 70, 300)
    for part in (sp.train, sp.validation, sp.test):
        pos = sum(s.label for s in part)
        assert abs(pos - (len(part) - pos)) <= 1


def test_split_minimum_balanced():
    sp = split_dataset(_labelled(10, 5), seed=3)
    for part in (sp.train, sp.validation, sp.test):
        pos = sum(s.label for s in part)
        assert abs(pos - (len(part) - pos)) <= 1
    with pytest.raises(ConfigError):
        split_dataset(_labelled(9, 4), seed=3)


def test_split_deterministic():
    a = split_dataset(_labelled(200, 100), seed=8)
    b = split_dataset(_labelled(200, 100), seed=8)
    assert [s.uid for s in a.train] == [s.uid for s in b.train]
    assert [s.uid for s in a.test] == [s.uid for s in b.test]


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 300), st.floats(0.1, 0.9), st.integers(0, 2**32))
def test_split_is_partition(n, frac, seed):
    recs = _labelled(n, int(n * frac))
    sp = split_dataset(recs, seed)
    uids = [s.uid for s in sp.train + sp.validation + sp.test]
    assert sorted(uids) == sorted(r.uid for r in recs)


def test_carrier_split_independent_of_stego_set():
    carriers = [TokenSequence([BOS, 4, EOS], 0, f"c{i}") for i in range(100)]
    s1 = [TokenSequence([BOS, 5, EOS], 1, f"a{i}") for i in range(100)]
    s2 = [TokenSequence([BOS, 6, 7, EOS], 1, f"b{i}") for i in range(100)]
    a, b = split_dataset(carriers + s1, 4), split_dataset(carriers + s2, 4)
    assert sorted(s.uid for s in a.test if s.label == 0) == sorted(s.uid for s in b.test if s.label == 0)


def test_batches_sizes_and_padding():
    seqs = random_sequences(1, 20, 5)
    assert [b.size for b in make_batches(seqs, 2)] == [2, 2, 1]
    same = [TokenSequence([BOS, 4, 5, EOS]) for _ in range(4)]
    for b in make_batches(same, 3, seed=2):
        assert not (b.ids == PAD).any()
    with pytest.raises(ConfigError):
        make_batches(seqs, 0)


def test_mask_sums_to_scored_length():
    seqs = random_sequences(2, 20, 9)
    b = pad_batch(seqs)
    assert b.target_mask.sum(axis=1).tolist() == [s.n for s in seqs]
    assert b.token_mask.sum(axis=1).tolist() == [len(s.ids) for s in seqs]
    assert (b.ids[b.token_mask == 0] == PAD).all()


def test_shuffled_batches_cover_everything():
    seqs = random_sequences(3, 20, 11)
    got = [u for b in make_batches(seqs, 4, seed=9) for u in b.uids]
    assert sorted(got) == sorted(s.uid for s in seqs)


def test_encode_texts_labels():
    v = build_vocab([["a", "b"]], cap=10)
    out = encode_texts(["a b", "b"], v, label=1, prefix="x:")
    assert [s.uid for s in out] == ["x:0", "x:1"] and all(s.label == 1 for s in out)
    assert np.array_equal(out[1].ids, [BOS, v.id_of["b"], EOS])
