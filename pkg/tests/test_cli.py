import json

import pytest

from paramdex.cli import main


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


TINY_CFG = """
d_model = 16
n_layers = 1
n_heads = 2
d_ff = 32
max_len = 32
window = 16
m_samples = 2
lr = 0.003
batch_size = 8
pretrain_epochs = 2
finetune_epochs = 3
plateau_patience = 10
k = 10
eval_ks = 1,5,10
mrr_cutoff = 10
n_groups = 2
per_group_k = 5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("ws")
    cfg = ws / "exp.cfg"
    cfg.write_text(TINY_CFG)
    data = ws / "data"
    assert run_cli("synth", "--docs", 40, "--train-queries", 20, "--heldout-queries", 8,
                   "--out-dir", data, "--config", cfg) == 0
    corpus_dir = ws / "corpus"
    assert run_cli("ingest", "--docs", data / "docs.jsonl", "--out-dir", corpus_dir,
                   "--config", cfg) == 0
    pairs_dir = ws / "pairs"
    assert run_cli("pairs", "--corpus-dir", corpus_dir, "--out-dir", pairs_dir,
                   "--config", cfg) == 0
    return {"ws": ws, "cfg": cfg, "data": data, "corpus": corpus_dir,
            "pairs": pairs_dir / "pairs.tsv"}


def test_synth_ingest_pairs_artifacts(workspace):
    assert (workspace["corpus"] / "docs.jsonl").exists()
    assert (workspace["corpus"] / "vocab.tsv").exists()
    assert workspace["pairs"].exists()
    meta = json.loads((workspace["corpus"] / "docs.jsonl.meta.json").read_text())
    assert meta["command"] == "ingest" and "config_hash" in meta


def test_subset_command(workspace, tmp_path):
    out = tmp_path / "sub"
    assert run_cli("subset", "--corpus-dir", workspace["corpus"],
                   "--qrels", workspace["data"] / "train_qrels.tsv",
                   "--strategy", "top_click", "--size", 20,
                   "--out-dir", out, "--config", workspace["cfg"]) == 0
    assert sum(1 for _ in open(out / "docs.jsonl")) == 20
    assert (out / "qrels.tsv").exists()


def test_train_vanilla_retrieve_eval(workspace, tmp_path):
    model_dir = tmp_path / "vanilla"
    assert run_cli("train-vanilla", "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--qrels", workspace["data"] / "train_qrels.tsv",
                   "--pairs", workspace["pairs"],
                   "--out-dir", model_dir, "--config", workspace["cfg"]) == 0
    assert (model_dir / "model.ckpt").exists()
    assert (model_dir / "loss_log.txt").read_text().startswith("pretrain\t0\t")

    run_dir = tmp_path / "run"
    assert run_cli("retrieve", "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--model", model_dir / "model.ckpt",
                   "--out-dir", run_dir, "--config", workspace["cfg"]) == 0
    run_path = run_dir / "run.txt"
    first = run_path.read_bytes()
    # rerun: byte-identical
    assert run_cli("retrieve", "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--model", model_dir / "model.ckpt",
                   "--out-dir", run_dir, "--config", workspace["cfg"]) == 0
    assert run_path.read_bytes() == first

    eval_dir = tmp_path / "eval"
    assert run_cli("eval", "--run", run_path,
                   "--qrels", workspace["data"] / "train_qrels.tsv",
                   "--out-dir", eval_dir, "--config", workspace["cfg"]) == 0
    report = (eval_dir / "report.csv").read_text()
    assert report.startswith("metric,value")


def test_retrieve_bm25(workspace, tmp_path):
    run_dir = tmp_path / "bm25"
    assert run_cli("retrieve", "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--method", "bm25", "--out-dir", run_dir,
                   "--config", workspace["cfg"]) == 0
    lines = (run_dir / "run.txt").read_text().splitlines()
    assert lines and all(len(l.split()) == 6 for l in lines)


def test_dense_then_overdense_zero_shot_identity(workspace, tmp_path):
    dense_dir = tmp_path / "dense"
    assert run_cli("train-dense", "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--qrels", workspace["data"] / "train_qrels.tsv",
                   "--out-dir", dense_dir, "--config", workspace["cfg"]) == 0
    for name in ("query_tower.ckpt", "doc_tower.ckpt", "dense_index.bin", "model.ckpt"):
        assert (dense_dir / name).exists()

    od_dir = tmp_path / "overdense0"
    assert run_cli("train-overdense", "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--qrels", workspace["data"] / "train_qrels.tsv",
                   "--dense-dir", dense_dir, "--skip-finetune",
                   "--out-dir", od_dir, "--config", workspace["cfg"]) == 0

    # zero fine-tuning: the two model checkpoints retrieve identically
    for model in (dense_dir / "model.ckpt", od_dir / "model.ckpt"):
        out = tmp_path / f"run_{model.parent.name}"
        assert run_cli("retrieve", "--corpus-dir", workspace["corpus"],
                       "--queries", workspace["data"] / "heldout_queries.tsv",
                       "--model", model, "--out-dir", out,
                       "--config", workspace["cfg"]) == 0
    a = (tmp_path / "run_dense" / "run.txt").read_bytes()
    b = (tmp_path / "run_overdense0" / "run.txt").read_bytes()
    assert a == b


def test_shard_pipeline(workspace, tmp_path):
    shards_dir = tmp_path / "shards"
    assert run_cli("shard-train", "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--qrels", workspace["data"] / "train_qrels.tsv",
                   "--strategy", "vanilla",
                   "--out-dir", shards_dir, "--config", workspace["cfg"]) == 0
    assert (shards_dir / "shards.tsv").exists()
    assert (shards_dir / "group00" / "model.ckpt").exists()
    assert (shards_dir / "group01" / "model.ckpt").exists()

    merge_dir = tmp_path / "merged"
    assert run_cli("shard-merge", "--shards-dir", shards_dir,
                   "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--out-dir", merge_dir, "--config", workspace["cfg"]) == 0
    assert (merge_dir / "merged.run").exists()
    assert (merge_dir / "group00.run").exists()

    diag_dir = tmp_path / "diag"
    assert run_cli("diag-scores", "--runs-dir", merge_dir,
                   "--out-dir", diag_dir, "--config", workspace["cfg"]) == 0
    stats = (diag_dir / "score_stats.csv").read_text().splitlines()
    assert stats[0].startswith("group,mean,std")
    assert len(stats) == 3  # header + 2 groups


def test_gradcheck_command(capsys):
    assert run_cli("gradcheck", "--coords", 2) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        run_cli("frobnicate")
    assert exc.value.code == 2


def test_runtime_error_exits_1(tmp_path):
    assert run_cli("ingest", "--docs", tmp_path / "missing.jsonl",
                   "--out-dir", tmp_path) == 1


def test_retrieve_model_method_requires_model(workspace, tmp_path):
    assert run_cli("retrieve", "--corpus-dir", workspace["corpus"],
                   "--queries", workspace["data"] / "train_queries.tsv",
                   "--out-dir", tmp_path, "--config", workspace["cfg"]) == 1


def test_subset_size_exceeding_corpus_exits_1(workspace, tmp_path):
    assert run_cli("subset", "--corpus-dir", workspace["corpus"],
                   "--qrels", workspace["data"] / "train_qrels.tsv",
                   "--strategy", "random", "--size", 10_000,
                   "--out-dir", tmp_path, "--config", workspace["cfg"]) == 1


def test_eval_error_on_unknown_run_qid(workspace, tmp_path):
    bad_run = tmp_path / "bad.run"
    bad_run.write_text("zz9 Q0 doc00000 1 1.000000 tag\n")
    assert run_cli("eval", "--run", bad_run,
                   "--qrels", workspace["data"] / "train_qrels.tsv",
                   "--out-dir", tmp_path, "--config", workspace["cfg"]) == 1
