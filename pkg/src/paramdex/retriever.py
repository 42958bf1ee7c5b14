"""Docid scoring over the trainable index matrix, top-k retrieval, and the
two training pipelines (from-scratch and init-from-dense-vectors).

The index is a d_model x n_docs matrix whose column i is the embedding of
internal docid i. Scoring a query is one matrix-vector product; ranking
uses the raw logits (softmax is monotone, so probabilities rank
identically, and raw scores are what the sharded merge diagnostics need).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Query
from .nn import (
    Encoder,
    EncoderConfig,
    adamw_init,
    adamw_step,
    forward_backward,
    softmax,
)
from .pairs import TrainingPair, query_pairs
from .training import (
    EpochLog,
    PlateauStopper,
    TrainConfig,
    batches,
    mixed_task_epoch,
    stage_rng,
)

log = logging.getLogger(__name__)


@dataclass
class RankedList:
    qid: str
    items: list[tuple[int, float]]  # (docid, raw logit), scores non-increasing

    def docids(self) -> list[int]:
        return [d for d, _ in self.items]


def score_all(v_q: np.ndarray, w_doc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Logits and docid probabilities for one query vector."""
    if v_q.ndim != 1 or w_doc.ndim != 2 or v_q.shape[0] != w_doc.shape[0]:
        raise ValueError(
            f"dimension mismatch: query vector {v_q.shape} vs docid matrix {w_doc.shape}"
        )
    logits = v_q @ w_doc
    return logits, softmax(logits)


def top_k(logits: np.ndarray, k: int) -> list[tuple[int, float]]:
    """First min(k, n) of the descending sort, ties broken by ascending docid."""
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.argsort(-logits, kind="stable")[: min(k, logits.shape[0])]
    return [(int(i), float(logits[i])) for i in order]


def init_overdense(dense_index: np.ndarray, n_docs: int | None = None) -> np.ndarray:
    """Docid matrix whose column i is document i's dense vector, copied exactly."""
    if dense_index.ndim != 2:
        raise ValueError("dense index must be 2-d (n_docs x d_model)")
    if n_docs is not None and dense_index.shape[0] != n_docs:
        raise ValueError(
            f"dense index has {dense_index.shape[0]} rows but the corpus has {n_docs} documents"
        )
    return np.ascontiguousarray(dense_index.T)


class DocidRetriever:
    """Query encoder + docid matrix; retrieval is exact scoring of every docid."""

    def __init__(self, encoder: Encoder, w_doc: np.ndarray):
        if w_doc.shape[0] != encoder.cfg.d_model:
            raise ValueError("docid matrix rows must equal the encoder's d_model")
        self.encoder = encoder
        self.w_doc = w_doc

    @property
    def n_docs(self) -> int:
        return self.w_doc.shape[1]

    def score(self, tokens) -> tuple[np.ndarray, np.ndarray]:
        return score_all(self.encoder.encode(tokens), self.w_doc)

    def retrieve(self, query: Query, k: int) -> RankedList:
        logits, _ = self.score(query.tokens)
        return RankedList(query.qid, top_k(logits, k))

    def retrieve_all(self, queries: list[Query], k: int) -> list[RankedList]:
        return [self.retrieve(q, k) for q in queries]


def _validate_targets(pairs: list[TrainingPair], n_docs: int) -> None:
    for p in pairs:
        if not 0 <= p.target < n_docs:
            raise ValueError(f"pair targets docid {p.target} outside corpus of size {n_docs}")


def _run_stage(
    stage: str,
    encoder: Encoder,
    w_doc: np.ndarray,
    epoch_pairs,  # callable epoch -> list[TrainingPair]
    n_epochs: int,
    cfg: TrainConfig,
    logs: list[EpochLog],
) -> np.ndarray:
    """AdamW epochs over batches produced per epoch; returns the new w_doc."""
    trainable = {"w_doc": w_doc} if cfg.freeze_encoder else dict(encoder.params, w_doc=w_doc)
    state = adamw_init(trainable)
    hyper = cfg.hyper()
    stopper = PlateauStopper(cfg.plateau_min_delta, cfg.plateau_patience)
    for epoch in range(n_epochs):
        total, count = 0.0, 0
        for batch in batches(epoch_pairs(epoch), cfg.batch_size):
            loss, grads = forward_backward(
                encoder, trainable["w_doc"], batch, freeze_encoder=cfg.freeze_encoder
            )
            trainable, state = adamw_step(trainable, grads, state, hyper)
            if not cfg.freeze_encoder:
                encoder.params = {k: trainable[k] for k in encoder.params}
            total += loss * len(batch)
            count += len(batch)
        mean_loss = total / max(count, 1)
        logs.append(EpochLog(stage, epoch, mean_loss))
        log.info("%s epoch %d: loss %.6f", stage, epoch, mean_loss)
        if stopper.update(mean_loss):
            log.info("%s: loss plateau, stopping after epoch %d", stage, epoch)
            break
    return trainable["w_doc"]


def train_vanilla(
    corpus: Corpus,
    pretrain_pairs: list[TrainingPair],
    queries: list[Query],
    qrels: dict[str, int],
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    skip_pretrain: bool = False,
    skip_finetune: bool = False,
) -> tuple[Encoder, np.ndarray, list[EpochLog]]:
    """Random init, self-supervised pre-training, then query-docid fine-tuning."""
    fine_pairs = query_pairs(queries, qrels)
    _validate_targets(pretrain_pairs, len(corpus))
    _validate_targets(fine_pairs, len(corpus))
    encoder = Encoder.init(enc_cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0])))
    w_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    w_doc = w_rng.normal(0.0, 0.02, size=(enc_cfg.d_model, len(corpus))).astype(np.float32)
    logs: list[EpochLog] = []
    if not skip_pretrain and cfg.pretrain_epochs > 0:
        if not pretrain_pairs:
            raise ValueError("pre-training requested but no pairs were provided")
        w_doc = _run_stage(
            "pretrain", encoder, w_doc,
            lambda ep: mixed_task_epoch(pretrain_pairs, cfg.task_weights, stage_rng(cfg.seed, 2, ep)),
            cfg.pretrain_epochs, cfg, logs,
        )
    if not skip_finetune and cfg.finetune_epochs > 0:
        if not fine_pairs:
            raise ValueError("fine-tuning requested but no labeled queries were provided")
        w_doc = _run_stage(
            "finetune", encoder, w_doc,
            lambda ep: [fine_pairs[i] for i in stage_rng(cfg.seed, 3, ep).permutation(len(fine_pairs))],
            cfg.finetune_epochs, cfg, logs,
        )
    return encoder, w_doc, logs


def train_overdense(
    corpus: Corpus,
    dense_index: np.ndarray,
    query_tower: Encoder,
    queries: list[Query],
    qrels: dict[str, int],
    cfg: TrainConfig,
    skip_finetune: bool = False,
) -> tuple[Encoder, np.ndarray, list[EpochLog]]:
    """Start from the dense baseline (encoder = its query tower, docid matrix
    = its document vectors) and fine-tune on query-docid pairs.

    With zero fine-tuning steps the result scores every query exactly like
    the dense baseline.
    """
    encoder = Encoder(query_tower.cfg, {k: v.copy() for k, v in query_tower.params.items()})
    w_doc = init_overdense(dense_index, len(corpus))
    fine_pairs = query_pairs(queries, qrels)
    _validate_targets(fine_pairs, len(corpus))
    logs: list[EpochLog] = []
    if not skip_finetune and cfg.finetune_epochs > 0:
        if not fine_pairs:
            raise ValueError("fine-tuning requested but no labeled queries were provided")
        w_doc = _run_stage(
            "finetune", encoder, w_doc,
            lambda ep: [fine_pairs[i] for i in stage_rng(cfg.seed, 3, ep).permutation(len(fine_pairs))],
            cfg.finetune_epochs, cfg, logs,
        )
    return encoder, w_doc, logs
