import json
from pathlib import Path

import numpy as np
import pytest

from deepsumm.corpus import EncodedCorpus, build_vocab, collate, preprocess

DATA = Path(__file__).resolve().parent.parent / "data" / "sample_pairs.jsonl"


def load_sample_tokens():
    raw = [json.loads(line) for line in DATA.read_text().splitlines() if line.strip()]
    kept, _ = preprocess((d["method"], d["comment"]) for d in raw)
    return kept


def random_pairs(rng, n, vocab, max_src=6, max_tgt=4):
    return [(list(rng.integers(4, vocab, size=rng.integers(1, max_src + 1))),
             list(rng.integers(4, vocab, size=rng.integers(1, max_tgt + 1)))) for _ in range(n)]


@pytest.fixture(scope="session")
def sample_tokens():
    return load_sample_tokens()


@pytest.fixture(scope="session")
def overfit_corpus(sample_tokens):
    tokens = sample_tokens[:32]
    src = build_vocab([m for m, _ in tokens], min_count=1)
    tgt = build_vocab([c for _, c in tokens], min_count=1)
    return EncodedCorpus.from_tokens(tokens, src, tgt)


@pytest.fixture
def tiny_batch():
    return collate(random_pairs(np.random.default_rng(0), 2, 11))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
