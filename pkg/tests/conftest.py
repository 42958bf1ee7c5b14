from __future__ import annotations

import pytest

from paramdex.corpus import Corpus, Document, build_vocabulary, tokenize


def corpus_from_texts(texts, clicks=None, min_freq=1) -> Corpus:
    """Small in-memory corpus for tests; external ids are d0, d1, ..."""
    token_lists = [tokenize(t) for t in texts]
    vocab = build_vocabulary(token_lists, min_freq=min_freq)
    clicks = clicks or [0] * len(texts)
    docs = [
        Document(i, f"d{i}", [vocab.lookup(t) for t in toks], clicks[i])
        for i, toks in enumerate(token_lists)
    ]
    return Corpus(docs, vocab)


@pytest.fixture
def tiny_corpus() -> Corpus:
    return corpus_from_texts([
        "apple banana apple cherry",
        "banana banana date",
        "cherry date apple banana fig",
    ])
