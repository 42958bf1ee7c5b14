"""Sparse and dense retrieval baselines.

BM25 runs over an in-memory inverted index. The dense baseline is a
two-tower encoder pair (shared weights by default) trained with softmax
cross-entropy over in-batch negatives; its document vectors double as the
initializer for the docid matrix, and dense retrieval literally scores
through the same code path as the docid retriever, so the two agree
bit-for-bit at initialization.
"""

from __future__ import annotations

import logging
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Query, UNK_ID
from .nn import Encoder, EncoderConfig, adamw_init, adamw_step
from .retriever import RankedList, init_overdense, score_all, top_k
from .training import EpochLog, PlateauStopper, TrainConfig, stage_rng

log = logging.getLogger(__name__)


@dataclass
class InvertedIndex:
    postings: dict[int, list[tuple[int, int]]]  # token -> [(docid, tf)] sorted by docid
    doc_len: np.ndarray
    avgdl: float
    n_docs: int

    def df(self, token: int) -> int:
        return len(self.postings.get(token, ()))


def build_inverted_index(corpus: Corpus) -> InvertedIndex:
    """Complete postings (term frequencies) for every token in the corpus.

    UNK is not indexed: a query term that falls out of the vocabulary
    matches nothing rather than matching every rare-token document.
    """
    if len(corpus) == 0:
        raise ValueError("cannot index an empty corpus")
    postings: dict[int, list[tuple[int, int]]] = {}
    doc_len = np.zeros(len(corpus), dtype=np.int64)
    for doc in corpus.docs:
        doc_len[doc.internal_id] = len(doc.tokens)
        counts: dict[int, int] = {}
        for t in doc.tokens:
            if t != UNK_ID:
                counts[t] = counts.get(t, 0) + 1
        for t in sorted(counts):
            postings.setdefault(t, []).append((doc.internal_id, counts[t]))
    avgdl = float(doc_len.mean())
    return InvertedIndex(postings, doc_len, avgdl, len(corpus))


def _idf(index: InvertedIndex, token: int) -> float:
    df = index.df(token)
    return float(np.log(1.0 + (index.n_docs - df + 0.5) / (df + 0.5)))


def bm25_score(
    index: InvertedIndex, query_tokens, docid: int, k1: float = 1.2, b: float = 0.75
) -> float:
    """Okapi score of one document for a query (distinct terms, +1-in-log idf)."""
    dl = float(index.doc_len[docid])
    norm = k1 * (1.0 - b + b * dl / index.avgdl)
    score = 0.0
    for t in set(query_tokens):
        plist = index.postings.get(t)
        if not plist:
            continue
        # (docid, 0) sorts just before the (docid, tf) entry, if any
        pos = bisect_left(plist, (docid, 0))
        if pos == len(plist) or plist[pos][0] != docid:
            continue
        tf = plist[pos][1]
        score += _idf(index, t) * tf * (k1 + 1.0) / (tf + norm)
    return score


def bm25_retrieve(index: InvertedIndex, query: Query, k: int) -> RankedList:
    """Top-k by BM25; only documents sharing a term with the query appear."""
    if k < 1:
        raise ValueError("k must be >= 1")
    k1, b = 1.2, 0.75
    scores: dict[int, float] = {}
    for t in set(query.tokens):
        plist = index.postings.get(t)
        if not plist:
            continue
        idf = _idf(index, t)
        for docid, tf in plist:
            dl = float(index.doc_len[docid])
            norm = k1 * (1.0 - b + b * dl / index.avgdl)
            scores[docid] = scores.get(docid, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda e: (-e[1], e[0]))[:k]
    return RankedList(query.qid, [(d, float(s)) for d, s in ranked])


def _in_batch_loss(q_vec: np.ndarray, d_vec: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross entropy of each query against its batch of candidate documents.

    Returns the mean loss and the gradient with respect to the score matrix.
    """
    scores = q_vec @ d_vec.T
    n = scores.shape[0]
    zmax = scores.max(axis=1, keepdims=True)
    lse = np.log(np.exp(scores - zmax).sum(axis=1, keepdims=True)) + zmax
    losses = lse[:, 0] - scores[np.arange(n), np.arange(n)]
    probs = np.exp(scores - lse)
    dscores = probs
    dscores[np.arange(n), np.arange(n)] -= 1.0
    dscores /= n
    return float(losses.mean()), dscores.astype(q_vec.dtype)


def train_two_tower(
    corpus: Corpus,
    queries: list[Query],
    qrels: dict[str, int],
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    shared: bool = True,
) -> tuple[Encoder, Encoder, list[EpochLog]]:
    """Train query/document towers with in-batch softmax cross entropy.

    Runs for cfg.finetune_epochs (with plateau stopping). A trailing batch
    of one pair is folded into the previous batch, since a single pair has
    no in-batch negatives.
    """
    if cfg.batch_size < 2:
        raise ValueError("in-batch negatives need batch_size >= 2")
    pairs = [(q.tokens, qrels[q.qid]) for q in queries if q.qid in qrels and q.tokens]
    if len(pairs) < 2:
        raise ValueError("two-tower training needs at least 2 labeled queries")
    q_enc = Encoder.init(enc_cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 10])))
    if shared:
        d_enc = q_enc
        trainable = dict(q_enc.params)
    else:
        d_enc = Encoder.init(enc_cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 11])))
        trainable = {f"q.{k}": v for k, v in q_enc.params.items()}
        trainable.update({f"d.{k}": v for k, v in d_enc.params.items()})
    state = adamw_init(trainable)
    hyper = cfg.hyper()
    stopper = PlateauStopper(cfg.plateau_min_delta, cfg.plateau_patience)
    logs: list[EpochLog] = []
    for epoch in range(cfg.finetune_epochs):
        order = stage_rng(cfg.seed, 1, epoch).permutation(len(pairs))
        chunks = [order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) == 1:
            chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
            chunks.pop()
        total, count = 0.0, 0
        for chunk in chunks:
            batch = [pairs[i] for i in chunk]
            q_vec, q_cache = q_enc.forward_batch([q for q, _ in batch])
            d_vec, d_cache = d_enc.forward_batch([corpus.doc(d).tokens for _, d in batch])
            loss, dscores = _in_batch_loss(q_vec, d_vec)
            gq = q_enc.backward_batch(q_cache, dscores @ d_vec)
            gd = d_enc.backward_batch(d_cache, dscores.T @ q_vec)
            if shared:
                grads = {k: gq[k] + gd[k] for k in gq}
            else:
                grads = {f"q.{k}": v for k, v in gq.items()}
                grads.update({f"d.{k}": v for k, v in gd.items()})
            trainable, state = adamw_step(trainable, grads, state, hyper)
            if shared:
                q_enc.params = dict(trainable)
            else:
                q_enc.params = {k[2:]: v for k, v in trainable.items() if k.startswith("q.")}
                d_enc.params = {k[2:]: v for k, v in trainable.items() if k.startswith("d.")}
            total += loss * len(batch)
            count += len(batch)
        mean_loss = total / count
        logs.append(EpochLog("two_tower", epoch, mean_loss))
        log.info("two_tower epoch %d: loss %.6f", epoch, mean_loss)
        if stopper.update(mean_loss):
            log.info("two_tower: loss plateau, stopping after epoch %d", epoch)
            break
    if shared:
        d_enc = q_enc
    return q_enc, d_enc, logs


def dense_encode_corpus(doc_encoder: Encoder, corpus: Corpus, batch_size: int = 32) -> np.ndarray:
    """Encode every document (file order, fixed batching) into an n_docs x d index."""
    rows = []
    for i in range(0, len(corpus), batch_size):
        chunk = [d.tokens for d in corpus.docs[i : i + batch_size]]
        vec, _ = doc_encoder.forward_batch(chunk, need_cache=False)
        rows.append(vec)
    return np.concatenate(rows, axis=0).astype(np.float32)


class DenseRetriever:
    """Dot-product retrieval over precomputed document vectors.

    Internally the index is transposed into a docid matrix and scored by
    the exact same routine as the docid retriever, which makes the
    zero-fine-tuning equivalence between the two exact rather than
    approximate.
    """

    def __init__(self, query_encoder: Encoder, dense_index: np.ndarray):
        self.encoder = query_encoder
        self.w = init_overdense(dense_index)

    def retrieve(self, query: Query, k: int) -> RankedList:
        logits, _ = score_all(self.encoder.encode(query.tokens), self.w)
        return RankedList(query.qid, top_k(logits, k))

    def retrieve_all(self, queries: list[Query], k: int) -> list[RankedList]:
        return [self.retrieve(q, k) for q in queries]


def dense_retrieve(query_encoder: Encoder, dense_index: np.ndarray, query: Query, k: int) -> RankedList:
    return DenseRetriever(query_encoder, dense_index).retrieve(query, k)
