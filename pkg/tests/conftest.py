import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# acceptance criteria report their PASS/FAIL lines here; printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from mlmkit.corpus import Document, DocumentStore
from mlmkit.model import ModelConfig, init_params
from mlmkit.tokenizer import train_vocab

LETTERS = "abcdefghij"


def store_from_texts(texts):
    """Build a store of documents given per-document paragraph lists."""
    docs = [
        Document.from_paragraphs(i, list(paragraphs))
        for i, paragraphs in enumerate(texts)
    ]
    return DocumentStore(documents=tuple(docs))


@pytest.fixture(scope="session")
def letters_vocab():
    """Vocabulary where every single-letter word is exactly one piece.

    Alphabet = marker + 10 letters; 10 extra slots learn the marker+letter
    merges, so each word encodes to a single subword.
    """
    store = store_from_texts([[" ".join(LETTERS)]])
    vocab = train_vocab(store, vocab_size=5 + 11 + len(LETTERS), seed=0)
    assert all(len(vocab.segment_word(c)) == 1 for c in LETTERS)
    return vocab


@pytest.fixture(scope="session")
def toy_setup():
    """Small trained vocabulary + matching encoder config and parameters."""
    paragraphs = [
        "alpha beta gamma delta alpha",
        "beta gamma epsilon zeta",
        "delta epsilon alpha zeta beta",
        "gamma alpha beta delta",
    ]
    store = store_from_texts([paragraphs[:2], paragraphs[2:]])
    vocab = train_vocab(store, vocab_size=60, seed=7)
    config = ModelConfig(
        n_layers=2,
        d_model=8,
        n_heads=2,
        d_ff=16,
        vocab_size=vocab.size,
        max_positions=32,
        dropout=0.0,
    )
    params = init_params(config, seed=11)
    return store, vocab, config, params


def letters_store_with_token_counts(counts):
    """One document per count, each containing that many single-letter words."""
    texts = []
    for k in counts:
        words = [LETTERS[i % len(LETTERS)] for i in range(k)]
        texts.append([" ".join(words)])
    return store_from_texts(texts)
