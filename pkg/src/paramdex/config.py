"""Flat key/value experiment configuration.

A config file is ``key = value`` lines (``#`` starts a comment). Every key
is listed in FIELDS below with its type, default and valid range; unknown
keys are rejected. Command-line flags override file values. The resolved
config hashes to a short hex digest that is stamped into every artifact's
sidecar, so artifacts are traceable to the exact settings and seed that
produced them.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .nn import EncoderConfig
from .training import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{s}'")


def _pos(x):  # > 0
    return x > 0


def _nonneg(x):  # >= 0
    return x >= 0


def _unit(x):  # [0, 1)
    return 0.0 <= x < 1.0


# name -> (parser, default, validator or None, description)
FIELDS: dict[str, tuple] = {
    "corpus_dir": (str, "", None, "prepared corpus directory"),
    "queries": (str, "", None, "queries tsv path"),
    "qrels": (str, "", None, "qrels tsv path"),
    "d_model": (int, 64, _pos, "encoder width"),
    "n_layers": (int, 2, _pos, "encoder depth"),
    "n_heads": (int, 4, _pos, "attention heads (must divide d_model)"),
    "d_ff": (int, 256, _pos, "feed-forward width"),
    "max_len": (int, 128, lambda x: x > 1, "max sequence length incl. CLS"),
    "min_freq": (int, 1, _pos, "vocabulary frequency threshold"),
    "window": (int, 128, _pos, "passage window size"),
    "m_samples": (int, 10, _pos, "term-set samples per document"),
    "ngram_n": (int, 3, _pos, "n-gram order"),
    "ngram_min_df": (int, 2, _pos, "minimum n-gram document frequency"),
    "max_ngrams": (int, 0, _nonneg, "n-gram cap (0 = 10 * corpus size)"),
    "weight_passage": (float, 1.0, _nonneg, "passage task sampling weight"),
    "weight_terms": (float, 1.0, _nonneg, "term-set task sampling weight"),
    "weight_ngram": (float, 1.0, _nonneg, "n-gram task sampling weight"),
    "lr": (float, 5e-5, _pos, "AdamW learning rate"),
    "beta1": (float, 0.9, _unit, "AdamW beta1"),
    "beta2": (float, 0.999, _unit, "AdamW beta2"),
    "adam_eps": (float, 1e-8, _pos, "AdamW epsilon"),
    "weight_decay": (float, 0.01, _nonneg, "decoupled weight decay"),
    "batch_size": (int, 32, _pos, "training batch size"),
    "pretrain_epochs": (int, 10, _nonneg, "max pre-training epochs"),
    "finetune_epochs": (int, 20, _nonneg, "max fine-tuning epochs"),
    "plateau_patience": (int, 3, _nonneg, "epochs without improvement before stop"),
    "plateau_min_delta": (float, 1e-4, _nonneg, "loss improvement threshold"),
    "seed": (int, 0, None, "master random seed"),
    "n_groups": (int, 4, _pos, "shard count"),
    "per_group_k": (int, 100, _pos, "per-shard retrieval depth"),
    "merge_mode": (str, "raw", lambda s: s in ("raw", "zscore"), "shard merge mode"),
    "k": (int, 100, _pos, "retrieval depth"),
    "mrr_cutoff": (int, 100, _pos, "MRR rank cutoff"),
    "eval_ks": (str, "1,20,100", None, "comma-separated recall cutoffs"),
    "freeze_encoder": (_bool, False, None, "train only the docid matrix"),
    "separate_towers": (_bool, False, None, "untie the two-tower weights"),
    "run_tag": (str, "paramdex", None, "tag column for run files"),
}


class ExperimentConfig:
    """Resolved configuration: file values overlaid with CLI overrides."""

    def __init__(self, values: dict | None = None):
        for name, (_, default, _, _) in FIELDS.items():
            setattr(self, name, default)
        if values:
            self.update(values)

    def update(self, values: dict) -> None:
        for key, value in values.items():
            if key not in FIELDS:
                raise ValueError(f"unknown config key '{key}'")
            parser = FIELDS[key][0]
            setattr(self, key, parser(value) if isinstance(value, str) else value)
        self.validate()

    def validate(self) -> None:
        for name, (_, _, check, _) in FIELDS.items():
            value = getattr(self, name)
            if check is not None and not check(value):
                raise ValueError(f"config key '{name}' has invalid value {value!r}")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        try:
            self.ks()
        except ValueError as e:
            raise ValueError(f"bad eval_ks: {e}") from e

    def ks(self) -> tuple[int, ...]:
        ks = tuple(int(x) for x in self.eval_ks.split(","))
        if not ks or any(k < 1 for k in ks):
            raise ValueError("cutoffs must be positive integers")
        return ks

    def resolved(self) -> dict:
        return {name: getattr(self, name) for name in FIELDS}

    def config_hash(self) -> str:
        text = "".join(f"{k}={v!r}\n" for k, v in sorted(self.resolved().items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size, d_model=self.d_model, n_layers=self.n_layers,
            n_heads=self.n_heads, d_ff=self.d_ff, max_len=self.max_len,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
            pretrain_epochs=self.pretrain_epochs, finetune_epochs=self.finetune_epochs,
            plateau_patience=self.plateau_patience, plateau_min_delta=self.plateau_min_delta,
            seed=self.seed,
            task_weights=(self.weight_passage, self.weight_terms, self.weight_ngram),
            freeze_encoder=self.freeze_encoder,
        )


def parse_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in values:
                raise ValueError(f"line {lineno}: duplicate key '{key}'")
            values[key] = value
    return values


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig(parse_config_file(path) if path else None)
    if overrides:
        cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg
