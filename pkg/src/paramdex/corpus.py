"""Corpus ingestion, tokenization, vocabulary, and evaluation-subset sampling.

File formats:
  documents  one JSON object per line: {"docid": str, "text": str, "clicks": int?}
  queries    tab-separated ``qid \\t text``, UTF-8
  qrels      tab-separated ``qid \\t docid`` (external ids), one positive per query
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
RESERVED_TOKENS = ("<pad>", "<unk>", "<cls>")

# lowercase + drop non-alphanumerics + whitespace split, all in one pass
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str, vocab: "Vocabulary | None" = None) -> list:
    """Split text into normalized tokens; map to indices when a vocabulary is given.

    Unknown tokens map to UNK_ID. Empty input yields an empty sequence.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    if vocab is None:
        return tokens
    return [vocab.lookup(t) for t in tokens]


class Vocabulary:
    """Token-string to contiguous-index mapping with fixed reserved slots 0..2."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]


def build_vocabulary(token_docs: Iterable[Sequence[str]], min_freq: int = 1) -> Vocabulary:
    """Build a vocabulary from tokenized documents.

    Keeps every token with corpus frequency >= min_freq. Index order is
    frequency descending, ties broken lexicographically, so the mapping is
    deterministic for a given corpus.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter = Counter()
    n_docs = 0
    for tokens in token_docs:
        n_docs += 1
        counts.update(tokens)
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept)


@dataclass
class Document:
    internal_id: int
    external_id: str
    tokens: list[int]
    click_count: int = 0


@dataclass
class Query:
    qid: str
    tokens: list[int]


class Corpus:
    """Immutable collection of tokenized documents with dense internal ids."""

    def __init__(self, docs: list[Document], vocab: Vocabulary):
        self.docs = docs
        self.vocab = vocab
        self.by_external: dict[str, int] = {d.external_id: d.internal_id for d in docs}
        if len(self.by_external) != len(docs):
            raise ValueError("duplicate external ids in corpus")
        for i, d in enumerate(docs):
            if d.internal_id != i:
                raise ValueError("internal ids must be contiguous and in order")

    def __len__(self) -> int:
        return len(self.docs)

    def doc(self, internal_id: int) -> Document:
        return self.docs[internal_id]

    def external_id(self, internal_id: int) -> str:
        return self.docs[internal_id].external_id

    def take(self, internal_ids: Sequence[int]) -> tuple["Corpus", dict[int, int]]:
        """New corpus keeping `internal_ids` (given order), same vocabulary.

        Returns the corpus and the old-id -> new-id mapping.
        """
        docs = []
        id_map: dict[int, int] = {}
        for new_id, old_id in enumerate(internal_ids):
            old = self.docs[old_id]
            docs.append(Document(new_id, old.external_id, old.tokens, old.click_count))
            id_map[old_id] = new_id
        return Corpus(docs, self.vocab), id_map


def ingest_corpus(path: str | Path, min_freq: int = 1) -> Corpus:
    """Read a JSONL document file, tokenize, and build the corpus vocabulary.

    Documents get internal ids in file order. Documents that tokenize to
    nothing are skipped with a warning; duplicate or missing fields raise.
    """
    records: list[tuple[str, list[str], int]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {lineno}: invalid JSON ({e.msg})") from e
            if "docid" not in rec:
                raise ValueError(f"line {lineno}: record missing 'docid' field")
            if "text" not in rec:
                raise ValueError(f"line {lineno}: record missing 'text' field")
            ext = str(rec["docid"])
            if ext in seen:
                raise ValueError(f"line {lineno}: duplicate docid '{ext}'")
            seen.add(ext)
            clicks = int(rec.get("clicks", 0))
            if clicks < 0:
                raise ValueError(f"line {lineno}: negative click count")
            tokens = tokenize(str(rec["text"]))
            if not tokens:
                log.warning("line %d: document '%s' is empty after tokenization, skipped", lineno, ext)
                continue
            records.append((ext, tokens, clicks))
    vocab = build_vocabulary((toks for _, toks, _ in records), min_freq=min_freq)
    docs = [
        Document(i, ext, [vocab.lookup(t) for t in toks], clicks)
        for i, (ext, toks, clicks) in enumerate(records)
    ]
    return Corpus(docs, vocab)


def load_queries(path: str | Path, vocab: Vocabulary) -> list[Query]:
    """Read a `qid \\t text` file and tokenize with the corpus vocabulary."""
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'qid<TAB>text'")
            qid, text = parts
            if qid in seen:
                raise ValueError(f"line {lineno}: duplicate qid '{qid}'")
            seen.add(qid)
            queries.append(Query(qid, tokenize(text, vocab)))
    return queries


def read_qrels_file(path: str | Path) -> dict[str, str]:
    """Read `qid \\t docid` lines into a qid -> external docid mapping.

    A query with several positives keeps the first and logs a warning.
    """
    qrels: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'qid<TAB>docid'")
            qid, docid = parts
            if qid in qrels:
                log.warning("line %d: extra positive for qid '%s' ignored", lineno, qid)
                continue
            qrels[qid] = docid
    return qrels


def resolve_qrels(qrels_ext: dict[str, str], corpus: Corpus) -> dict[str, int]:
    """Map external qrels docids to internal ids; unknown docids raise."""
    missing = sorted(d for d in qrels_ext.values() if d not in corpus.by_external)
    if missing:
        raise ValueError(f"qrels reference unknown docids: {missing[:10]}")
    return {qid: corpus.by_external[d] for qid, d in qrels_ext.items()}


def load_qrels(path: str | Path, corpus: Corpus) -> dict[str, int]:
    return resolve_qrels(read_qrels_file(path), corpus)


def sample_subset(
    corpus: Corpus,
    qrels: dict[str, int],
    strategy: str,
    size: int,
    seed: int = 0,
) -> tuple[Corpus, dict[str, int]]:
    """Keep `size` documents by click rank or uniform sampling; remap qrels.

    top_click keeps the highest-click documents (ties by ascending internal
    id). random takes a seeded permutation prefix, so subsets are nested
    across sizes for a fixed seed. Surviving documents keep their original
    relative order; queries whose positive is dropped are dropped too.
    """
    if size <= 0:
        raise ValueError("subset size must be positive")
    if size > len(corpus):
        raise ValueError(f"subset size {size} exceeds corpus size {len(corpus)}")
    if strategy == "top_click":
        ranked = sorted(corpus.docs, key=lambda d: (-d.click_count, d.internal_id))
        keep = {d.internal_id for d in ranked[:size]}
    elif strategy == "random":
        perm = np.random.default_rng(seed).permutation(len(corpus))
        keep = {int(i) for i in perm[:size]}
    else:
        raise ValueError(f"unknown subset strategy '{strategy}'")
    kept_ids = sorted(keep)
    sub, id_map = corpus.take(kept_ids)
    new_qrels = {qid: id_map[d] for qid, d in qrels.items() if d in id_map}
    return sub, new_qrels


def save_corpus(corpus: Corpus, out_dir: str | Path) -> dict[str, Path]:
    """Persist a tokenized corpus as docs.jsonl + vocab.tsv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    docs_path = out / "docs.jsonl"
    vocab_path = out / "vocab.tsv"
    with open(docs_path, "w", encoding="utf-8") as f:
        for d in corpus.docs:
            f.write(json.dumps(
                {"docid": d.external_id, "token_ids": d.tokens, "clicks": d.click_count},
                separators=(",", ":"),
            ) + "\n")
    with open(vocab_path, "w", encoding="utf-8") as f:
        for t in corpus.vocab.id_to_token:
            f.write(t + "\n")
    return {"docs": docs_path, "vocab": vocab_path}


def load_corpus(in_dir: str | Path) -> Corpus:
    """Load a corpus persisted by save_corpus."""
    src = Path(in_dir)
    with open(src / "vocab.tsv", encoding="utf-8") as f:
        id_to_token = [line.rstrip("\n") for line in f]
    if tuple(id_to_token[:3]) != RESERVED_TOKENS:
        raise ValueError("vocab.tsv does not start with the reserved tokens")
    vocab = Vocabulary(id_to_token[3:])
    docs: list[Document] = []
    with open(src / "docs.jsonl", encoding="utf-8") as f:
        for i, line in enumerate(f):
            rec = json.loads(line)
            docs.append(Document(i, str(rec["docid"]), list(rec["token_ids"]), int(rec.get("clicks", 0))))
    return Corpus(docs, vocab)
