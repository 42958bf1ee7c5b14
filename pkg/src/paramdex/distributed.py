"""Sharded retrieval: partition the corpus, retrieve per group, merge lists.

Each group owns an independently trained retriever over its slice of the
corpus. Raw-score merging concatenates per-group lists and resorts; since
independently trained models put their logits on different scales, the
module also offers per-shard z-score calibration (experimental) and a
score-distribution diagnostic that makes the scale mismatch visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .retriever import DocidRetriever, RankedList

_STD_FLOOR = 1e-12


@dataclass
class ShardPlan:
    n_groups: int
    seed: int
    group_of: np.ndarray  # global docid -> group id
    groups: list[np.ndarray]  # group id -> sorted global docids; local id = position


@dataclass
class ShardRun:
    group: int
    ranked: RankedList  # global docids, raw logit scores


def partition(n_docs: int, g: int, seed: int = 0) -> ShardPlan:
    """Uniform random assignment of documents to g groups, sizes within 1."""
    if g <= 0:
        raise ValueError("group count must be positive")
    if g > n_docs:
        raise ValueError(f"cannot split {n_docs} documents into {g} groups")
    perm = np.random.default_rng(seed).permutation(n_docs)
    base, extra = divmod(n_docs, g)
    groups: list[np.ndarray] = []
    group_of = np.empty(n_docs, dtype=np.int64)
    off = 0
    for i in range(g):
        size = base + (1 if i < extra else 0)
        members = np.sort(perm[off : off + size])
        groups.append(members)
        group_of[members] = i
        off += size
    return ShardPlan(g, seed, group_of, groups)


def split_corpus(
    corpus: Corpus, plan: ShardPlan, qrels: dict[str, int]
) -> list[tuple[Corpus, dict[str, int]]]:
    """Per-group sub-corpus (contiguous local ids) and group-local qrels."""
    out = []
    for members in plan.groups:
        sub, id_map = corpus.take([int(d) for d in members])
        local_qrels = {qid: id_map[d] for qid, d in qrels.items() if d in id_map}
        out.append((sub, local_qrels))
    return out


def shard_retrieve(
    models: list[DocidRetriever | None],
    plan: ShardPlan,
    query,
    per_group_k: int = 100,
) -> list[ShardRun]:
    """Each group's top-k on its local docid space, remapped to global ids."""
    if len(models) != plan.n_groups:
        raise ValueError(f"expected {plan.n_groups} models, got {len(models)}")
    runs = []
    for gid, model in enumerate(models):
        if model is None:
            raise ValueError(f"missing model for group {gid}")
        local = model.retrieve(query, min(per_group_k, len(plan.groups[gid])))
        members = plan.groups[gid]
        items = [(int(members[d]), s) for d, s in local.items]
        runs.append(ShardRun(gid, RankedList(local.qid, items)))
    return runs


def merge_score_lists(lists: list[list[tuple]], k: int, mode: str = "raw") -> list[tuple]:
    """Merge per-group (docid, score) lists into one top-k list.

    raw sorts the concatenation by score (ties by ascending docid). zscore
    first standardizes each group's scores by that group's mean and
    standard deviation, which makes the merge invariant to any positive
    affine rescaling of a single group's scores. A docid appearing in
    several lists keeps its best score.
    """
    if mode not in ("raw", "zscore"):
        raise ValueError(f"unknown merge mode '{mode}'")
    if k < 1:
        raise ValueError("k must be >= 1")
    pooled: dict = {}
    for entries in lists:
        if not entries:
            continue
        if mode == "zscore":
            scores = np.array([s for _, s in entries], dtype=np.float64)
            mean = float(scores.mean())
            std = float(scores.std())
            if std < _STD_FLOOR:
                std = 1.0
            entries = [(d, (s - mean) / std) for d, s in entries]
        for d, s in entries:
            if d not in pooled or s > pooled[d]:
                pooled[d] = s
    ranked = sorted(pooled.items(), key=lambda e: (-e[1], e[0]))[:k]
    return [(d, float(s)) for d, s in ranked]


def merge_runs(runs: list[ShardRun], k: int, mode: str = "raw") -> RankedList:
    """Merge one query's shard runs; empty input yields an empty list."""
    if not runs:
        return RankedList("", [])
    qids = {r.ranked.qid for r in runs}
    if len(qids) > 1:
        raise ValueError(f"shard runs mix qids: {sorted(qids)}")
    merged = merge_score_lists([r.ranked.items for r in runs], k, mode)
    return RankedList(runs[0].ranked.qid, merged)


def score_distribution_stats(runs_by_group: list[list[RankedList]]) -> list[dict]:
    """Per-group statistics of all returned scores: mean/std/min/max/deciles."""
    if not runs_by_group:
        raise ValueError("no shard runs given")
    rows = []
    for gid, ranked_lists in enumerate(runs_by_group):
        scores = np.array(
            [s for rl in ranked_lists for _, s in rl.items], dtype=np.float64
        )
        if scores.size == 0:
            raise ValueError(f"group {gid} returned no scores")
        deciles = np.percentile(scores, np.arange(10, 100, 10))
        rows.append({
            "group": gid,
            "mean": float(scores.mean()),
            "std": float(scores.std()),
            "min": float(scores.min()),
            "max": float(scores.max()),
            **{f"d{i}": float(deciles[i - 1]) for i in range(1, 10)},
        })
    return rows


def render_stats_csv(rows: list[dict]) -> str:
    cols = ["group", "mean", "std", "min", "max"] + [f"d{i}" for i in range(1, 10)]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(
            str(r["group"]) if c == "group" else f"{r[c]:.6f}" for c in cols
        ))
    return "\n".join(lines) + "\n"


def mean_spread_ratio(rows: list[dict]) -> float:
    """Spread of group means relative to the average within-group std."""
    means = np.array([r["mean"] for r in rows])
    stds = np.array([r["std"] for r in rows])
    denom = float(stds.mean())
    spread = float(np.ptp(means))
    if denom < _STD_FLOOR:
        return float("inf") if spread > 0 else 0.0
    return spread / denom


def write_manifest(path: str | Path, plan: ShardPlan, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# g={plan.n_groups} seed={plan.seed}\n")
        for gid, members in enumerate(plan.groups):
            for d in members:
                f.write(f"{gid}\t{corpus.external_id(int(d))}\n")


def read_manifest(path: str | Path, corpus: Corpus) -> ShardPlan:
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("# g="):
            raise ValueError("manifest missing '# g=<g> seed=<seed>' header")
        fields = dict(part.split("=") for part in header[2:].split())
        g, seed = int(fields["g"]), int(fields["seed"])
        group_of = np.full(len(corpus), -1, dtype=np.int64)
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            gid_s, ext = line.split("\t")
            if ext not in corpus.by_external:
                raise ValueError(f"line {lineno}: unknown docid '{ext}'")
            group_of[corpus.by_external[ext]] = int(gid_s)
    if (group_of < 0).any():
        raise ValueError("manifest does not cover the corpus")
    groups = [np.flatnonzero(group_of == gid) for gid in range(g)]
    return ShardPlan(g, seed, group_of, groups)
