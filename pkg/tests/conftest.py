from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lssa.corpus import BOS, EOS, N_SPECIALS, TokenSequence  # noqa: E402
from lssa.lstm import ModelConfig, ModelParams  # noqa: E402
from lssa.numkernel import Rng  # noqa: E402


def random_sequences(seed, vocab_size, count, min_len=1, max_len=8, label=None):
    rng = Rng(seed)
    out = []
    for k in range(count):
        n = min_len + rng.randbelow(max_len - min_len + 1)
        body = [N_SPECIALS + rng.randbelow(vocab_size - N_SPECIALS) for _ in range(n)]
        out.append(TokenSequence([BOS] + body + [EOS], label, f"s{k}"))
    return out


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(vocab_size=24, embed_dim=6, hidden_dim=8, layers=2, dropout_keep=0.5)


@pytest.fixture(scope="session")
def skewed_lm():
    """Untrained LM with a wide init, so next-token distributions are far from uniform."""
    return ModelParams.init(ModelConfig(48, 8, 12, 2, 1.0), seed=5, head="lm", scale=0.9)


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
