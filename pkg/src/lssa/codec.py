"""Bit embedding during LM generation: Bins, fixed-length and Huffman (VLC) coding.

Every generation step takes the LM's next-token distribution, drops the four
special ids, renormalises, and lets payload bits pick the emitted token.
Extraction replays the same LM over the stego tokens and reads the bits back.
Bits are MSB-first; a payload that runs out is padded with zeros, and padding
is not counted in ``bits_consumed``.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import BOS, EOS, N_SPECIALS, STEGO, TokenSequence
from .errors import ConfigError, DesyncError
from .lstm import ModelParams, Stepper
from .numkernel import BitStream, Rng

METHODS = ("bins", "flc", "vlc")


@dataclass(frozen=True)
class CodecSpec:
    method: str
    param: int
    partition_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown codec {self.method!r}")
        if self.method == "vlc" and self.param < 2:
            raise ConfigError("VLC pool size must be >= 2")
        if self.method != "vlc" and self.param < 1:
            raise ConfigError("bits per word must be >= 1")

    @property
    def name(self) -> str:
        return f"{self.method}-{self.param}"

    @classmethod
    def parse(cls, text: str, partition_seed: int = 0) -> "CodecSpec":
        """``"flc:2"``, ``"bins:3"`` or ``"vlc:8"``."""
        try:
            method, param = text.strip().lower().replace("-", ":").split(":")
            return cls(method, int(param), partition_seed)
        except ValueError as exc:
            raise ConfigError(f"bad codec spec {text!r}") from exc

    def to_dict(self) -> dict:
        return {"method": self.method, "param": self.param, "partition_seed": self.partition_seed}


# --------------------------------------------------------------------------
# Bins
# --------------------------------------------------------------------------

@dataclass
class BinPartition:
    bins: list                 # bin index -> sorted id array
    bin_of: np.ndarray         # id -> bin index, -1 for specials

    @property
    def count(self) -> int:
        return len(self.bins)


def bins_partition(vocab_size: int, b: int, partition_seed: int) -> BinPartition:
    """Seeded permutation of the non-special ids dealt round-robin into 2^b bins."""
    n = vocab_size - N_SPECIALS
    nbins = 1 << b
    if nbins > n:
        raise ConfigError(f"2^{b} bins exceed the {n} non-special tokens")
    ids = N_SPECIALS + Rng(partition_seed).permutation(n)
    bin_of = np.full(vocab_size, -1, dtype=np.int64)
    bin_of[ids] = np.arange(n) % nbins
    bins = [np.sort(ids[j::nbins]) for j in range(nbins)]
    return BinPartition(bins, bin_of)


# --------------------------------------------------------------------------
# Huffman
# --------------------------------------------------------------------------

@dataclass
class HuffmanCode:
    codes: dict                # token id -> bit string
    root: object               # leaf: int token id; internal: (zero_child, one_child)

    def lengths(self) -> dict:
        return {t: len(c) for t, c in self.codes.items()}

    def mean_length(self, probs: dict) -> float:
        return sum(probs[t] * len(c) for t, c in self.codes.items())


def huffman_build(probs) -> HuffmanCode:
    """Deterministic Huffman code over ``{token_id: probability}``.

    The two lightest nodes merge first (ties: smaller minimum token id). In a
    merge the heavier child gets bit 0; on equal weight the child holding the
    smaller minimum id gets 0.
    """
    items = dict(probs) if isinstance(probs, dict) else dict(enumerate(probs))
    if len(items) < 2:
        raise ConfigError("Huffman pool needs at least two symbols")
    heap = [(float(p), t, t) for t, p in items.items()]
    heapq.heapify(heap)
    while len(heap) > 1:
        pa, ma, na = heapq.heappop(heap)
        pb, mb, nb = heapq.heappop(heap)
        if pb > pa or (pb == pa and mb < ma):
            node = (nb, na)
        else:
            node = (na, nb)
        heapq.heappush(heap, (pa + pb, min(ma, mb), node))
    root = heap[0][2]
    codes = {}
    stack = [(root, "")]
    while stack:
        node, prefix = stack.pop()
        if isinstance(node, tuple):
            stack.append((node[1], prefix + "1"))
            stack.append((node[0], prefix + "0"))
        else:
            codes[node] = prefix
    return HuffmanCode(codes, root)


# --------------------------------------------------------------------------
# embedding / extraction
# --------------------------------------------------------------------------

@dataclass
class StegoRecord:
    tokens: TokenSequence
    bits_consumed: int
    step_bits: list = field(default_factory=list)     # real payload bits per step
    step_depth: list = field(default_factory=list)    # bits used per step incl. padding

    @property
    def words(self) -> int:
        return len(self.tokens.ids) - 2

    @property
    def bpw(self) -> float:
        return self.bits_consumed / self.words


def candidate_distribution(probs: np.ndarray) -> np.ndarray:
    """Drop special ids and renormalise each row."""
    p = np.array(probs, dtype=np.float64)
    p[..., :N_SPECIALS] = 0.0
    return p / p.sum(axis=-1, keepdims=True)


def _ranked(p: np.ndarray) -> np.ndarray:
    # probability descending, id ascending
    return np.argsort(-p, kind="stable")


def _bits_of(value: int, k: int) -> list:
    return [(value >> (k - 1 - j)) & 1 for j in range(k)]


class _Chooser:
    def __init__(self, codec: CodecSpec, vocab_size: int, partition: Optional[BinPartition]):
        self.codec = codec
        if codec.method == "bins":
            self.partition = partition or bins_partition(vocab_size, codec.param, codec.partition_seed)
        elif (1 << codec.param if codec.method == "flc" else codec.param) > vocab_size - N_SPECIALS:
            raise ConfigError(f"{codec.name} pool exceeds the non-special vocabulary")

    def pool(self, p: np.ndarray):
        c = self.codec
        if c.method == "flc":
            return _ranked(p)[: 1 << c.param]
        if c.method == "vlc":
            top = _ranked(p)[: c.param]
            q = p[top] / p[top].sum()
            return huffman_build({int(t): float(v) for t, v in zip(top, q)})
        return None

    def choose(self, p: np.ndarray, stream: BitStream) -> tuple[int, int, int]:
        """Return (token, real_bits, bits_used)."""
        c = self.codec
        if c.method == "flc":
            idx, real = stream.read_int(c.param)
            return int(self.pool(p)[idx]), real, c.param
        if c.method == "bins":
            idx, real = stream.read_int(c.param)
            members = self.partition.bins[idx]
            return int(members[np.argmax(p[members])]), real, c.param
        node = self.pool(p).root
        real = used = 0
        while isinstance(node, tuple):
            bits, r = stream.read(1)
            node = node[bits[0]]
            real += r
            used += 1
        return int(node), real, used

    def bits_for(self, p: np.ndarray, token: int, step: int) -> list:
        c = self.codec
        if c.method == "flc":
            hit = np.nonzero(self.pool(p) == token)[0]
            if hit.size == 0:
                raise DesyncError(f"step {step}: token {token} outside the FLC pool")
            return _bits_of(int(hit[0]), c.param)
        if c.method == "bins":
            j = int(self.partition.bin_of[token]) if 0 <= token < len(self.partition.bin_of) else -1
            if j < 0:
                raise DesyncError(f"step {step}: token {token} belongs to no bin")
            members = self.partition.bins[j]
            if int(members[np.argmax(p[members])]) != token:
                raise DesyncError(f"step {step}: token {token} is not the best of bin {j}")
            return _bits_of(j, c.param)
        code = self.pool(p).codes.get(token)
        if code is None:
            raise DesyncError(f"step {step}: token {token} outside the VLC pool")
        return [int(ch) for ch in code]


def embed_batch(params: ModelParams, codec: CodecSpec, payloads: Sequence[BitStream],
                lengths: Sequence[int], partition: Optional[BinPartition] = None,
                batch_size: int = 256) -> list[StegoRecord]:
    """Generate one stego text per payload, each ``lengths[r]`` words long.

    Texts in a batch advance in lockstep; the fixed-order kernel keeps every
    text's distributions identical to generating it alone.
    """
    if len(payloads) != len(lengths):
        raise ConfigError("need one length per payload")
    if any(n < 1 for n in lengths):
        raise ConfigError("target length must be >= 1")
    chooser = _Chooser(codec, params.config.vocab_size, partition)
    records: list[StegoRecord] = []
    for start in range(0, len(payloads), batch_size):
        streams = list(payloads[start:start + batch_size])
        lens = list(lengths[start:start + batch_size])
        B = len(streams)
        stepper = Stepper(params, B)
        tok = np.full(B, BOS, dtype=np.int64)
        ids = [[BOS] for _ in range(B)]
        consumed = [0] * B
        step_bits = [[] for _ in range(B)]
        step_depth = [[] for _ in range(B)]
        for t in range(max(lens)):
            p = candidate_distribution(stepper.step(tok))
            for r in range(B):
                if t >= lens[r]:
                    tok[r] = EOS
                    continue
                w, real, used = chooser.choose(p[r], streams[r])
                tok[r] = w
                ids[r].append(w)
                consumed[r] += real
                step_bits[r].append(real)
                step_depth[r].append(used)
        for r in range(B):
            seq = TokenSequence(ids[r] + [EOS], STEGO)
            records.append(StegoRecord(seq, consumed[r], step_bits[r], step_depth[r]))
    return records


def embed(params: ModelParams, codec: CodecSpec, payload: BitStream, target_len: int,
          partition: Optional[BinPartition] = None) -> StegoRecord:
    return embed_batch(params, codec, [payload], [target_len], partition)[0]


def embed_stream(params: ModelParams, codec: CodecSpec, payload: BitStream,
                 lengths: Sequence[int], partition: Optional[BinPartition] = None) -> list[StegoRecord]:
    """Spread one payload over consecutive texts (text j continues where j-1 stopped)."""
    chooser_part = partition
    if codec.method == "bins" and chooser_part is None:
        chooser_part = bins_partition(params.config.vocab_size, codec.param, codec.partition_seed)
    return [embed_batch(params, codec, [payload], [n], chooser_part)[0] for n in lengths]


def extract_batch(params: ModelParams, codec: CodecSpec, sequences: Sequence[Sequence[int]],
                  partition: Optional[BinPartition] = None, batch_size: int = 256) -> list[BitStream]:
    """Recover the bits behind each stego id sequence (BOS ... EOS framing optional)."""
    chooser = _Chooser(codec, params.config.vocab_size, partition)
    out: list[BitStream] = []
    for start in range(0, len(sequences), batch_size):
        words = []
        for s in sequences[start:start + batch_size]:
            s = list(s)
            if s and s[0] == BOS:
                s = s[1:]
            if s and s[-1] == EOS:
                s = s[:-1]
            words.append(s)
        B = len(words)
        stepper = Stepper(params, B)
        tok = np.full(B, BOS, dtype=np.int64)
        bits = [[] for _ in range(B)]
        for t in range(max((len(w) for w in words), default=0)):
            p = candidate_distribution(stepper.step(tok))
            for r in range(B):
                if t >= len(words[r]):
                    tok[r] = EOS
                    continue
                w = int(words[r][t])
                bits[r].extend(chooser.bits_for(p[r], w, t))
                tok[r] = w
        out.extend(BitStream(b) for b in bits)
    return out


def extract(params: ModelParams, codec: CodecSpec, tokens, partition: Optional[BinPartition] = None) -> BitStream:
    ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
    return extract_batch(params, codec, [ids], partition)[0]


def measure_bpw(records: Sequence[StegoRecord]) -> float:
    if not records:
        raise ConfigError("no stego records")
    return sum(r.bits_consumed for r in records) / sum(r.words for r in records)


def payload_digest(bits) -> str:
    """Short SHA-256 of a bit list; stored in sidecars to catch silent corruption."""
    return hashlib.sha256(bytes(int(b) for b in bits)).hexdigest()[:16]


def sidecar(codec: CodecSpec, records: Sequence[StegoRecord], payloads: Optional[Sequence[BitStream]] = None,
            **seeds) -> str:
    """JSON metadata accompanying a stego corpus file."""
    meta = {"codec": codec.to_dict(), "seeds": seeds,
            "bits_consumed": [r.bits_consumed for r in records],
            "words": [r.words for r in records],
            "bpw": measure_bpw(records) if records else None}
    if payloads is not None:
        meta["payload_digest"] = [payload_digest(p.bits[: r.bits_consumed])
                                  for p, r in zip(payloads, records)]
    return json.dumps(meta, indent=1, sort_keys=True) + "\n"


def verify_extraction(meta: dict, streams: Sequence[BitStream]) -> list[int]:
    """Indices of texts whose extracted payload prefix fails the sidecar digest."""
    bad = []
    for i, (n, digest, s) in enumerate(zip(meta["bits_consumed"], meta["payload_digest"], streams)):
        if len(s.bits) < n or payload_digest(s.bits[:n]) != digest:
            bad.append(i)
    return bad
