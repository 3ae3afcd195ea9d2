"""Shared fixtures: deterministic corpora for the training tests."""

import pytest

from rope_kit.numerics import Rng

WORDS = (
    b"the", b"of", b"and", b"a", b"to", b"in", b"is", b"was", b"he", b"for",
    b"it", b"with", b"as", b"his", b"on", b"be", b"at", b"by", b"had", b"not",
    b"are", b"but", b"from", b"or", b"have", b"an", b"they", b"which", b"one",
    b"you", b"were", b"her", b"all", b"she", b"there", b"would", b"their",
    b"we", b"him", b"been", b"has", b"when", b"who", b"will", b"more", b"no",
    b"if", b"out", b"so", b"said", b"what", b"up", b"its", b"about", b"into",
    b"than", b"them", b"can", b"only", b"other", b"new", b"some", b"could",
    b"time", b"these", b"two", b"may", b"then", b"do", b"first", b"any",
    b"my", b"now", b"such", b"like", b"our", b"over", b"man", b"me", b"even",
    b"most", b"made", b"after", b"also", b"did", b"many", b"before", b"must",
    b"through", b"back", b"years", b"where", b"much", b"your", b"way",
)


def synth_text(n_bytes: int, seed: int = 12345) -> bytes:
    """Deterministic pseudo-English: seeded word salad with sentence breaks."""
    rng = Rng(seed)
    chunks = []
    total = 0
    sentence_len = 0
    while total < n_bytes:
        word = WORDS[rng.randint(len(WORDS))]
        sentence_len += 1
        if sentence_len >= 8 + rng.randint(8):
            word = word + (b"." if rng.randint(4) else b".\n")
            sentence_len = 0
        chunks.append(word)
        total += len(word) + 1
    return b" ".join(chunks)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """~300 KB corpus for fast unit-level training tests."""
    path = tmp_path_factory.mktemp("data") / "small.txt"
    path.write_bytes(synth_text(300_000))
    return path


@pytest.fixture(scope="session")
def megabyte_corpus(tmp_path_factory):
    """>= 1 MB corpus for the training acceptance criterion."""
    path = tmp_path_factory.mktemp("data") / "big.txt"
    text = synth_text(1_100_000)
    assert len(text) >= 1_000_000
    path.write_bytes(text)
    return path
