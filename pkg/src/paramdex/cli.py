"""Command-line entry point wiring the modules into experiment pipelines.

Every subcommand reads declared inputs, writes its artifacts under
--out-dir, stamps each artifact with the resolved config hash and seed via
a ``.meta.json`` sidecar, and prints the paths it wrote. Reruns with the
same inputs, config and seed reproduce artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, checkpoint, corpus as corpus_mod, distributed, evalkit, pairs as pairs_mod
from .config import ExperimentConfig, load_config
from .nn import Encoder, EncoderConfig, finite_diff_check, forward_backward
from .pairs import TrainingPair
from .retriever import DocidRetriever, RankedList, init_overdense, train_overdense, train_vanilla
from .runfiles import read_run, write_run
from .synth import generate as synth_generate
from .training import format_logs

log = logging.getLogger(__name__)


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="experiment config file (key = value lines)")
    sp.add_argument("--seed", type=int, help="override the config seed")
    sp.add_argument("--out-dir", default=".", help="directory for output artifacts")


def _cfg(args: argparse.Namespace, **extra) -> ExperimentConfig:
    overrides = {"seed": args.seed, **extra}
    return load_config(args.config, overrides)


def _out(args: argparse.Namespace) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _done(*paths: Path) -> int:
    for p in paths:
        print(p)
    return 0


def _meta(path: Path, cfg: ExperimentConfig, command: str, **extra) -> None:
    checkpoint.write_meta(path, config_hash=cfg.config_hash(), seed=cfg.seed,
                          command=command, **extra)


def _load_corpus_queries(corpus_dir, queries_path, qrels_path):
    corp = corpus_mod.load_corpus(corpus_dir)
    queries = corpus_mod.load_queries(queries_path, corp.vocab)
    qrels = corpus_mod.load_qrels(qrels_path, corp)
    return corp, queries, qrels


def cmd_synth(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    paths = synth_generate(
        out, n_docs=args.docs, n_topics=args.topics,
        n_train=args.train_queries, n_heldout=args.heldout_queries,
        doc_len=(args.doc_len_min, args.doc_len_max), seed=cfg.seed,
    )
    _meta(paths["docs"], cfg, "synth", n_docs=args.docs)
    return _done(*paths.values())


def cmd_ingest(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp = corpus_mod.ingest_corpus(args.docs, min_freq=cfg.min_freq)
    written = corpus_mod.save_corpus(corp, out)
    _meta(written["docs"], cfg, "ingest", n_docs=len(corp), vocab_size=len(corp.vocab))
    print(f"ingested {len(corp)} documents, vocabulary {len(corp.vocab)}", file=sys.stderr)
    return _done(*written.values())


def cmd_subset(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp = corpus_mod.load_corpus(args.corpus_dir)
    qrels = corpus_mod.load_qrels(args.qrels, corp)
    sub, sub_qrels = corpus_mod.sample_subset(corp, qrels, args.strategy, args.size, seed=cfg.seed)
    written = corpus_mod.save_corpus(sub, out)
    qrels_path = out / "qrels.tsv"
    with open(qrels_path, "w", encoding="utf-8") as f:
        for qid in sorted(sub_qrels):
            f.write(f"{qid}\t{sub.external_id(sub_qrels[qid])}\n")
    _meta(written["docs"], cfg, "subset", strategy=args.strategy, size=args.size,
          queries_kept=len(sub_qrels))
    return _done(*written.values(), qrels_path)


def cmd_pairs(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp = corpus_mod.load_corpus(args.corpus_dir)
    generated = pairs_mod.generate_pretrain_pairs(
        corp, window=cfg.window, m_samples=cfg.m_samples, ngram_n=cfg.ngram_n,
        ngram_min_df=cfg.ngram_min_df,
        max_ngrams=cfg.max_ngrams if cfg.max_ngrams > 0 else None,
        seed=cfg.seed,
    )
    path = out / "pairs.tsv"
    pairs_mod.save_pairs(path, generated, corp)
    counts = {t: sum(1 for p in generated if p.task == t) for t in ("passage", "terms", "ngram")}
    _meta(path, cfg, "pairs", **counts)
    print(f"pairs: {counts}", file=sys.stderr)
    return _done(path)


def _save_retriever(out: Path, name: str, enc: Encoder, w_doc, cfg, command, logs) -> list[Path]:
    model_path = out / name
    checkpoint.save_model(model_path, enc.cfg, enc.params, w_doc)
    _meta(model_path, cfg, command)
    log_path = out / "loss_log.txt"
    log_path.write_text(format_logs(logs), encoding="utf-8")
    return [model_path, log_path]


def cmd_train_dense(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp, queries, qrels = _load_corpus_queries(args.corpus_dir, args.queries, args.qrels)
    enc_cfg = cfg.encoder_config(len(corp.vocab))
    q_enc, d_enc, logs = baselines.train_two_tower(
        corp, queries, qrels, enc_cfg, cfg.train_config(), shared=not cfg.separate_towers
    )
    index = baselines.dense_encode_corpus(d_enc, corp, batch_size=cfg.batch_size)
    q_path, d_path, i_path = out / "query_tower.ckpt", out / "doc_tower.ckpt", out / "dense_index.bin"
    checkpoint.save_model(q_path, enc_cfg, q_enc.params)
    checkpoint.save_model(d_path, enc_cfg, d_enc.params)
    checkpoint.save_dense_index(i_path, index)
    for p in (q_path, d_path, i_path):
        _meta(p, cfg, "train-dense")
    # retriever-equivalent checkpoint: query tower + transposed index
    written = _save_retriever(out, "model.ckpt", q_enc, init_overdense(index, len(corp)),
                              cfg, "train-dense", logs)
    return _done(q_path, d_path, i_path, *written)


def cmd_train_vanilla(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp, queries, qrels = _load_corpus_queries(args.corpus_dir, args.queries, args.qrels)
    pretrain = pairs_mod.load_pairs(args.pairs, corp) if args.pairs else []
    if not args.pairs and not args.skip_pretrain:
        raise ValueError("train-vanilla needs --pairs unless --skip-pretrain is given")
    enc, w_doc, logs = train_vanilla(
        corp, pretrain, queries, qrels, cfg.encoder_config(len(corp.vocab)),
        cfg.train_config(), skip_pretrain=args.skip_pretrain, skip_finetune=args.skip_finetune,
    )
    return _done(*_save_retriever(out, "model.ckpt", enc, w_doc, cfg, "train-vanilla", logs))


def cmd_train_overdense(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp, queries, qrels = _load_corpus_queries(args.corpus_dir, args.queries, args.qrels)
    dense_dir = Path(args.dense_dir)
    tower_cfg, tower_params, _ = checkpoint.load_model(dense_dir / "query_tower.ckpt")
    if tower_cfg.vocab_size != len(corp.vocab):
        raise ValueError("query tower vocabulary does not match the corpus")
    index = checkpoint.load_dense_index(dense_dir / "dense_index.bin")
    enc, w_doc, logs = train_overdense(
        corp, index, Encoder(tower_cfg, tower_params), queries, qrels,
        cfg.train_config(), skip_finetune=args.skip_finetune,
    )
    return _done(*_save_retriever(out, "model.ckpt", enc, w_doc, cfg, "train-overdense", logs))


def cmd_retrieve(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp = corpus_mod.load_corpus(args.corpus_dir)
    queries = corpus_mod.load_queries(args.queries, corp.vocab)
    run_path = Path(args.run) if args.run else out / "run.txt"
    if args.method == "model" and not args.model:
        raise ValueError("retrieve --method model requires --model")
    if args.method == "bm25":
        index = baselines.build_inverted_index(corp)
        ranked = [baselines.bm25_retrieve(index, q, cfg.k) for q in queries]
    else:
        ck_cfg, params, w_doc = checkpoint.load_model(args.model)
        if w_doc is None:
            raise ValueError(f"{args.model} has no docid matrix; not a retriever checkpoint")
        if ck_cfg.vocab_size != len(corp.vocab):
            raise ValueError("model vocabulary does not match the corpus")
        if w_doc.shape[1] != len(corp):
            raise ValueError("model docid matrix does not match the corpus size")
        model = DocidRetriever(Encoder(ck_cfg, params), w_doc)
        ranked = model.retrieve_all(queries, cfg.k)
    write_run(run_path, ranked, corp.external_id, tag=cfg.run_tag)
    _meta(run_path, cfg, "retrieve", method=args.method, k=cfg.k)
    return _done(run_path)


def cmd_eval(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    report = evalkit.evaluate_run_file(args.run, args.qrels, ks=cfg.ks(), cutoff=cfg.mrr_cutoff)
    table = evalkit.render_table(report)
    print(table, end="")
    txt_path, csv_path = out / "report.txt", out / "report.csv"
    txt_path.write_text(table, encoding="utf-8")
    csv_path.write_text(evalkit.render_csv(report), encoding="utf-8")
    _meta(csv_path, cfg, "eval")
    _done(txt_path, csv_path)
    return 1 if report.has_nan() else 0


def _shard_seed(seed: int, gid: int) -> int:
    return seed * 1000 + gid + 1


def cmd_shard_train(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp, queries, qrels = _load_corpus_queries(args.corpus_dir, args.queries, args.qrels)
    plan = distributed.partition(len(corp), cfg.n_groups, seed=cfg.seed)
    manifest = out / "shards.tsv"
    distributed.write_manifest(manifest, plan, corp)
    _meta(manifest, cfg, "shard-train", strategy=args.strategy)
    written = [manifest]
    for gid, (sub, sub_qrels) in enumerate(distributed.split_corpus(corp, plan, qrels)):
        gdir = out / f"group{gid:02d}"
        gdir.mkdir(exist_ok=True)
        tcfg = cfg.train_config()
        tcfg.seed = _shard_seed(cfg.seed, gid)
        enc_cfg = cfg.encoder_config(len(corp.vocab))
        if args.strategy == "vanilla":
            pre = pairs_mod.generate_pretrain_pairs(
                sub, window=cfg.window, m_samples=cfg.m_samples, ngram_n=cfg.ngram_n,
                ngram_min_df=cfg.ngram_min_df,
                max_ngrams=cfg.max_ngrams if cfg.max_ngrams > 0 else None,
                seed=tcfg.seed,
            )
            enc, w_doc, logs = train_vanilla(sub, pre, queries, sub_qrels, enc_cfg, tcfg)
        else:
            q_enc, d_enc, tt_logs = baselines.train_two_tower(
                sub, queries, sub_qrels, enc_cfg, tcfg, shared=not cfg.separate_towers
            )
            index = baselines.dense_encode_corpus(d_enc, sub, batch_size=cfg.batch_size)
            enc, w_doc, ft_logs = train_overdense(sub, index, q_enc, queries, sub_qrels, tcfg)
            logs = tt_logs + ft_logs
        written += _save_retriever(gdir, "model.ckpt", enc, w_doc, cfg, "shard-train", logs)
        log.info("group %d trained on %d documents, %d labeled queries",
                 gid, len(sub), len(sub_qrels))
    return _done(*written)


def _load_shard_models(shards_dir: Path, corp, plan) -> list[DocidRetriever]:
    models = []
    for gid in range(plan.n_groups):
        path = shards_dir / f"group{gid:02d}" / "model.ckpt"
        if not path.exists():
            raise ValueError(f"missing model for group {gid}: {path}")
        ck_cfg, params, w_doc = checkpoint.load_model(path)
        if w_doc is None or w_doc.shape[1] != len(plan.groups[gid]):
            raise ValueError(f"group {gid} checkpoint does not match the shard plan")
        models.append(DocidRetriever(Encoder(ck_cfg, params), w_doc))
    return models


def cmd_shard_merge(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    corp = corpus_mod.load_corpus(args.corpus_dir)
    queries = corpus_mod.load_queries(args.queries, corp.vocab)
    shards_dir = Path(args.shards_dir)
    plan = distributed.read_manifest(shards_dir / "shards.tsv", corp)
    models = _load_shard_models(shards_dir, corp, plan)
    group_runs: list[list] = [[] for _ in range(plan.n_groups)]
    merged = []
    for q in queries:
        runs = distributed.shard_retrieve(models, plan, q, per_group_k=cfg.per_group_k)
        for r in runs:
            group_runs[r.group].append(r.ranked)
        merged.append(distributed.merge_runs(runs, cfg.k, mode=cfg.merge_mode))
    written = []
    for gid, ranked in enumerate(group_runs):
        gpath = out / f"group{gid:02d}.run"
        write_run(gpath, ranked, corp.external_id, tag=f"{cfg.run_tag}-g{gid}")
        written.append(gpath)
    merged_path = out / "merged.run"
    write_run(merged_path, merged, corp.external_id, tag=f"{cfg.run_tag}-{cfg.merge_mode}")
    _meta(merged_path, cfg, "shard-merge", mode=cfg.merge_mode)
    written.append(merged_path)
    return _done(*written)


def cmd_diag_scores(args) -> int:
    cfg = _cfg(args)
    out = _out(args)
    runs_dir = Path(args.runs_dir)
    run_paths = sorted(runs_dir.glob("group*.run"))
    if not run_paths:
        raise ValueError(f"no group*.run files under {runs_dir}")
    by_group = []
    for path in run_paths:
        parsed = read_run(path)
        by_group.append([
            RankedList(qid, [(i, score) for i, (_, _, score) in enumerate(entries)])
            for qid, entries in parsed.items()
        ])
    rows = distributed.score_distribution_stats(by_group)
    ratio = distributed.mean_spread_ratio(rows)
    csv_path = out / "score_stats.csv"
    csv_path.write_text(distributed.render_stats_csv(rows), encoding="utf-8")
    _meta(csv_path, cfg, "diag-scores", groups=len(rows))
    print(f"spread of group means / mean within-group std = {ratio:.4f}")
    for r in rows:
        print(f"group {r['group']}: mean {r['mean']:.4f} std {r['std']:.4f} "
              f"min {r['min']:.4f} max {r['max']:.4f}")
    return _done(csv_path)


def cmd_gradcheck(args) -> int:
    cfg = _cfg(args)
    enc_cfg = EncoderConfig(
        vocab_size=args.vocab, d_model=args.d_model, n_layers=args.layers,
        n_heads=args.heads, d_ff=args.d_ff, max_len=args.max_len,
    )
    rng = np.random.default_rng(cfg.seed)
    enc = Encoder.init(enc_cfg, rng, dtype=np.float64)
    w_doc = rng.normal(0.0, 0.02, size=(enc_cfg.d_model, args.docs))
    batch = [
        TrainingPair(
            list(rng.integers(3, enc_cfg.vocab_size, size=int(rng.integers(2, 16)))),
            int(rng.integers(0, args.docs)), "terms",
        )
        for _ in range(args.batch)
    ]
    params = dict(enc.params, w_doc=w_doc)

    def loss_and_grad(p):
        return forward_backward(
            Encoder(enc_cfg, {k: v for k, v in p.items() if k != "w_doc"}), p["w_doc"], batch
        )

    worst, per_param = finite_diff_check(
        loss_and_grad, params, eps=args.eps,
        max_coords_per_param=args.coords, rng=np.random.default_rng(cfg.seed + 1),
    )
    for name in sorted(per_param, key=per_param.get, reverse=True):
        print(f"{name:24s} {per_param[name]:.3e}")
    print(f"max relative error: {worst:.3e} (threshold {args.threshold:g})")
    return 0 if worst < args.threshold else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="paramdex",
        description="Model-based retrieval experiments with a trainable docid matrix.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic corpus with queries and qrels")
    sp.add_argument("--docs", type=int, default=1000)
    sp.add_argument("--topics", type=int, default=None)
    sp.add_argument("--train-queries", type=int, default=None)
    sp.add_argument("--heldout-queries", type=int, default=None)
    sp.add_argument("--doc-len-min", type=int, default=40)
    sp.add_argument("--doc-len-max", type=int, default=80)
    _add_common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="tokenize a JSONL document file into a corpus directory")
    sp.add_argument("--docs", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("subset", help="sample an evaluation subset by clicks or at random")
    sp.add_argument("--corpus-dir", required=True)
    sp.add_argument("--qrels", required=True)
    sp.add_argument("--strategy", choices=("top_click", "random"), required=True)
    sp.add_argument("--size", type=int, required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_subset)

    sp = sub.add_parser("pairs", help="generate self-supervised pre-training pairs")
    sp.add_argument("--corpus-dir", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_pairs)

    sp = sub.add_parser("train-dense", help="train the two-tower baseline and encode the corpus")
    sp.add_argument("--corpus-dir", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--qrels", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_train_dense)

    sp = sub.add_parser("train-vanilla", help="train the retriever from scratch")
    sp.add_argument("--corpus-dir", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--qrels", required=True)
    sp.add_argument("--pairs", help="pre-training pairs tsv")
    sp.add_argument("--skip-pretrain", action="store_true")
    sp.add_argument("--skip-finetune", action="store_true")
    _add_common(sp)
    sp.set_defaults(func=cmd_train_vanilla)

    sp = sub.add_parser("train-overdense", help="initialize from the dense baseline and fine-tune")
    sp.add_argument("--corpus-dir", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--qrels", required=True)
    sp.add_argument("--dense-dir", required=True, help="train-dense output directory")
    sp.add_argument("--skip-finetune", action="store_true")
    _add_common(sp)
    sp.set_defaults(func=cmd_train_overdense)

    sp = sub.add_parser("retrieve", help="write a run file for a query set")
    sp.add_argument("--corpus-dir", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--model", help="retriever checkpoint (required for --method model)")
    sp.add_argument("--method", choices=("model", "bm25"), default="model")
    sp.add_argument("--run", help="output run file path (default <out-dir>/run.txt)")
    _add_common(sp)
    sp.set_defaults(func=cmd_retrieve)

    sp = sub.add_parser("eval", help="score a run file against qrels")
    sp.add_argument("--run", required=True)
    sp.add_argument("--qrels", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("shard-train", help="partition the corpus and train one model per group")
    sp.add_argument("--corpus-dir", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--qrels", required=True)
    sp.add_argument("--strategy", choices=("vanilla", "overdense"), default="vanilla")
    _add_common(sp)
    sp.set_defaults(func=cmd_shard_train)

    sp = sub.add_parser("shard-merge", help="retrieve per group and merge the ranked lists")
    sp.add_argument("--shards-dir", required=True)
    sp.add_argument("--corpus-dir", required=True)
    sp.add_argument("--queries", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_shard_merge)

    sp = sub.add_parser("diag-scores", help="per-group score distribution report")
    sp.add_argument("--runs-dir", required=True, help="directory with group*.run files")
    _add_common(sp)
    sp.set_defaults(func=cmd_diag_scores)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    sp.add_argument("--d-model", type=int, default=16)
    sp.add_argument("--layers", type=int, default=1)
    sp.add_argument("--heads", type=int, default=2)
    sp.add_argument("--d-ff", type=int, default=32)
    sp.add_argument("--max-len", type=int, default=32)
    sp.add_argument("--vocab", type=int, default=32)
    sp.add_argument("--docs", type=int, default=8)
    sp.add_argument("--batch", type=int, default=6)
    sp.add_argument("--eps", type=float, default=1e-4)
    sp.add_argument("--coords", type=int, default=4)
    sp.add_argument("--threshold", type=float, default=1e-4)
    _add_common(sp)
    sp.set_defaults(func=cmd_gradcheck)

    return ap


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
