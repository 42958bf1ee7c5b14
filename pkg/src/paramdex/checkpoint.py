"""Binary model and dense-index files, plus sidecar metadata.

Layout (all little-endian):

    magic "DYNR" | uint32 version | uint32 d_model, n_layers, n_heads,
    vocab_size, max_len, n_docs | payload | uint64 checksum

The payload is float32 arrays in param_names() order, then the docid
matrix (d_model x n_docs) when n_docs > 0. A dense-index file reuses the
header with n_layers = n_heads = vocab_size = max_len = 0 and a payload of
n_docs x d_model rows. The checksum is an 8-byte blake2b of the payload.

Every artifact gets a deterministic sidecar ``<path>.meta.json`` recording
the config hash and seed that produced it (no timestamps, so reruns are
byte-identical).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .nn import EncoderConfig, param_names, param_shape

MAGIC = b"DYNR"
VERSION = 1
_HEADER = struct.Struct("<4s7I")


def payload_checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def _write(path: Path, header_fields: tuple[int, ...], arrays: list[np.ndarray]) -> None:
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, *header_fields))
        f.write(payload)
        f.write(struct.pack("<Q", payload_checksum(payload)))


def _read(path: Path) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 8:
        raise ValueError(f"{path}: file too short to be a checkpoint")
    magic, version, *fields = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    payload = raw[_HEADER.size : -8]
    (stored,) = struct.unpack("<Q", raw[-8:])
    if payload_checksum(payload) != stored:
        raise ValueError(f"{path}: payload checksum mismatch")
    return tuple(fields), payload


def save_model(
    path: str | Path,
    cfg: EncoderConfig,
    params: dict[str, np.ndarray],
    w_doc: np.ndarray | None = None,
) -> None:
    """Write encoder parameters (and the docid matrix, if any) as float32."""
    arrays = [params[name] for name in param_names(cfg)]
    n_docs = 0
    if w_doc is not None:
        if w_doc.shape[0] != cfg.d_model:
            raise ValueError("docid matrix rows must equal d_model")
        arrays.append(w_doc)
        n_docs = w_doc.shape[1]
    fields = (cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.vocab_size, cfg.max_len, n_docs)
    _write(Path(path), fields, arrays)


def load_model(path: str | Path) -> tuple[EncoderConfig, dict[str, np.ndarray], np.ndarray | None]:
    fields, payload = _read(Path(path))
    d_model, n_layers, n_heads, vocab_size, max_len, n_docs = fields
    # d_ff is not in the header; recover it from the payload size.
    # total = base + L*(attn/ln fixed) + L*(d_ff*(2*d_model+1) + d_model) + n_docs*d_model
    base = vocab_size * d_model + max_len * d_model + 2 * d_model
    per_layer_fixed = 4 * d_model * d_model + 8 * d_model
    total = len(payload) // 4 - n_docs * d_model
    if n_layers > 0:
        per_layer_ffn = (total - base - n_layers * per_layer_fixed) // n_layers
        d_ff = (per_layer_ffn - d_model) // (2 * d_model + 1)
    else:
        d_ff = 1
    cfg = EncoderConfig(
        vocab_size=vocab_size, d_model=d_model, n_layers=n_layers,
        n_heads=n_heads, d_ff=max(d_ff, 1), max_len=max_len,
    )
    data = np.frombuffer(payload, dtype="<f4")
    params: dict[str, np.ndarray] = {}
    off = 0
    for name in param_names(cfg):
        shape = param_shape(cfg, name)
        size = _np_size(shape)
        params[name] = data[off : off + size].reshape(shape).copy()
        off += size
    w_doc = None
    if n_docs > 0:
        size = d_model * n_docs
        w_doc = data[off : off + size].reshape(d_model, n_docs).copy()
        off += size
    if off != data.size:
        raise ValueError(f"{path}: payload size does not match header")
    return cfg, params, w_doc


def save_dense_index(path: str | Path, matrix: np.ndarray) -> None:
    """Persist per-document vectors (n_docs x d_model)."""
    if matrix.ndim != 2:
        raise ValueError("dense index must be a 2-d array")
    n_docs, d_model = matrix.shape
    _write(Path(path), (d_model, 0, 0, 0, 0, n_docs), [matrix])


def load_dense_index(path: str | Path) -> np.ndarray:
    fields, payload = _read(Path(path))
    d_model, n_layers, _, _, _, n_docs = fields
    if n_layers != 0:
        raise ValueError(f"{path}: not a dense index file")
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != n_docs * d_model:
        raise ValueError(f"{path}: payload size does not match header")
    return data.reshape(n_docs, d_model).copy()


def write_meta(artifact_path: str | Path, **fields) -> Path:
    """Deterministic JSON sidecar next to an artifact."""
    meta_path = Path(str(artifact_path) + ".meta.json")
    meta_path.write_text(json.dumps(fields, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return meta_path


def read_meta(artifact_path: str | Path) -> dict:
    return json.loads(Path(str(artifact_path) + ".meta.json").read_text(encoding="utf-8"))


def _np_size(shape: tuple[int, ...]) -> int:
    size = 1
    for s in shape:
        size *= s
    return size
