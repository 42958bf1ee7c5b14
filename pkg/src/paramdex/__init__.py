"""Model-based document retrieval: the index is a trainable parameter matrix.

A small transformer encoder maps a query to a vector; a docid matrix maps
that vector to a probability over every document in the corpus. Training
burns the corpus into the matrix (self-supervised pairs, then supervised
query-docid fine-tuning). Sparse (BM25) and dense (two-tower) baselines,
an init-from-dense-vectors path, and a sharded mode with score-merge
diagnostics round out the toolkit.
"""

__version__ = "0.1.0"
