"""Minimal numerical engine: transformer encoder, exact gradients, AdamW.

Everything here is plain numpy. The encoder is a pre-layer-norm transformer
with learned positional embeddings and CLS pooling; its backward pass is
written by hand and checked coordinate-wise against central finite
differences (see finite_diff_check). Parameters live in a flat
name -> array dict whose canonical order is given by param_names().

No dropout: training is deterministic by construction. Training runs in
float32; gradient checks construct float64 models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import CLS_ID, PAD_ID

LN_EPS = 1e-5
_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 128

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def param_names(cfg: EncoderConfig) -> list[str]:
    """Canonical parameter order; checkpoints serialize arrays in this order."""
    names = ["tok_emb", "pos_emb"]
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        names += [
            p + "ln1.scale", p + "ln1.shift",
            p + "attn.wq", p + "attn.bq",
            p + "attn.wk", p + "attn.bk",
            p + "attn.wv", p + "attn.bv",
            p + "attn.wo", p + "attn.bo",
            p + "ln2.scale", p + "ln2.shift",
            p + "ffn.w1", p + "ffn.b1",
            p + "ffn.w2", p + "ffn.b2",
        ]
    names += ["ln_f.scale", "ln_f.shift"]
    return names


def param_shape(cfg: EncoderConfig, name: str) -> tuple[int, ...]:
    d, f = cfg.d_model, cfg.d_ff
    if name == "tok_emb":
        return (cfg.vocab_size, d)
    if name == "pos_emb":
        return (cfg.max_len, d)
    if name in ("ln_f.scale", "ln_f.shift"):
        return (d,)
    leaf = name.split(".", 1)[1]
    return {
        "ln1.scale": (d,), "ln1.shift": (d,),
        "attn.wq": (d, d), "attn.bq": (d,),
        "attn.wk": (d, d), "attn.bk": (d,),
        "attn.wv": (d, d), "attn.bv": (d,),
        "attn.wo": (d, d), "attn.bo": (d,),
        "ln2.scale": (d,), "ln2.shift": (d,),
        "ffn.w1": (d, f), "ffn.b1": (f,),
        "ffn.w2": (f, d), "ffn.b2": (d,),
    }[leaf]


def init_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """Weights ~ N(0, 0.02), biases/shifts zero, layer-norm scales one."""
    params: dict[str, np.ndarray] = {}
    for name in param_names(cfg):
        shape = param_shape(cfg, name)
        if name.endswith(".scale"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".shift", "bq", "bk", "bv", "bo", "b1", "b2")):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = rng.normal(0.0, 0.02, size=shape).astype(dtype)
    return params


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + _GELU_C * x * x * x)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_K * (x + _GELU_C * x * x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)


def _layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mean) * inv
    return xhat * scale + shift, xhat, inv


def _layer_norm_backward(dy, xhat, inv, scale):
    """Returns (dx, dscale, dshift); reductions over all leading axes."""
    axes = tuple(range(dy.ndim - 1))
    dscale = (dy * xhat).sum(axis=axes)
    dshift = dy.sum(axis=axes)
    dxh = dy * scale
    dx = inv * (
        dxh
        - dxh.mean(axis=-1, keepdims=True)
        - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dscale, dshift


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _linear_backward(x, dy, w):
    """y = x @ w + b with x (..., in): returns (dx, dw, db)."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


class Encoder:
    """Transformer encoder returning the CLS-position hidden state."""

    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: EncoderConfig, seed: int | np.random.Generator = 0, dtype=np.float32) -> "Encoder":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(cfg, init_params(cfg, rng, dtype=dtype))

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    def _prepare(self, seqs: Sequence[Sequence[int]]):
        cfg = self.cfg
        clipped = [list(s[: cfg.max_len - 1]) for s in seqs]
        n = 1 + max((len(s) for s in clipped), default=0)
        ids = np.full((len(clipped), n), PAD_ID, dtype=np.int64)
        ids[:, 0] = CLS_ID
        lens = np.empty(len(clipped), dtype=np.int64)
        for i, s in enumerate(clipped):
            ids[i, 1 : 1 + len(s)] = s
            lens[i] = 1 + len(s)
        valid = np.arange(n)[None, :] < lens[:, None]
        mask = np.where(valid, 0.0, -np.inf).astype(self.dtype)[:, None, None, :]
        return ids, mask

    def forward_batch(self, seqs: Sequence[Sequence[int]], need_cache: bool = True):
        """Encode a batch of token sequences. Returns (cls (B, d), cache).

        Sequences are truncated to max_len - 1 and a CLS token is
        prepended. Padding positions are masked out of attention so a
        sequence's encoding does not depend on its batch neighbors' lengths.
        """
        cfg, p = self.cfg, self.params
        ids, mask = self._prepare(seqs)
        n = ids.shape[1]
        scale = 1.0 / math.sqrt(cfg.d_model // cfg.n_heads)
        x = p["tok_emb"][ids] + p["pos_emb"][:n]
        layers = []
        for i in range(cfg.n_layers):
            pre = f"layer{i}."
            a, xhat1, inv1 = _layer_norm(x, p[pre + "ln1.scale"], p[pre + "ln1.shift"])
            q = a @ p[pre + "attn.wq"] + p[pre + "attn.bq"]
            k = a @ p[pre + "attn.wk"] + p[pre + "attn.bk"]
            v = a @ p[pre + "attn.wv"] + p[pre + "attn.bv"]
            qh = _split_heads(q, cfg.n_heads)
            kh = _split_heads(k, cfg.n_heads)
            vh = _split_heads(v, cfg.n_heads)
            s = qh @ kh.transpose(0, 1, 3, 2) * scale + mask
            s -= s.max(axis=-1, keepdims=True)
            e = np.exp(s)
            att = e / e.sum(axis=-1, keepdims=True)
            c = _merge_heads(att @ vh)
            o = c @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
            x_mid = x + o
            fin, xhat2, inv2 = _layer_norm(x_mid, p[pre + "ln2.scale"], p[pre + "ln2.shift"])
            act_in = fin @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
            h = _gelu(act_in)
            x = x_mid + h @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
            if need_cache:
                layers.append((a, xhat1, inv1, qh, kh, vh, att, c, xhat2, inv2, fin, act_in, h))
        y, xhat_f, inv_f = _layer_norm(x, p["ln_f.scale"], p["ln_f.shift"])
        cls_vec = y[:, 0, :].copy()
        cache = (ids, scale, layers, xhat_f, inv_f) if need_cache else None
        return cls_vec, cache

    def encode(self, tokens: Sequence[int]) -> np.ndarray:
        """CLS representation of one token sequence (empty input is valid)."""
        out, _ = self.forward_batch([list(tokens)], need_cache=False)
        return out[0]

    def backward_batch(self, cache, d_cls: np.ndarray) -> dict[str, np.ndarray]:
        """Exact reverse-mode gradients of the cached forward pass.

        d_cls is the loss gradient at the CLS output, shape (B, d_model).
        Returns a dict congruent with the parameter dict.
        """
        cfg, p = self.cfg, self.params
        ids, scale, layers, xhat_f, inv_f = cache
        b, n = ids.shape
        g = {name: np.zeros_like(arr) for name, arr in p.items()}

        dy = np.zeros((b, n, cfg.d_model), dtype=self.dtype)
        dy[:, 0, :] = d_cls
        dx, g["ln_f.scale"], g["ln_f.shift"] = _layer_norm_backward(
            dy, xhat_f, inv_f, p["ln_f.scale"]
        )
        for i in reversed(range(cfg.n_layers)):
            pre = f"layer{i}."
            a, xhat1, inv1, qh, kh, vh, att, c, xhat2, inv2, fin, act_in, h = layers[i]
            # feed-forward block
            dh, g[pre + "ffn.w2"], g[pre + "ffn.b2"] = _linear_backward(h, dx, p[pre + "ffn.w2"])
            dact = dh * _gelu_grad(act_in)
            dfin, g[pre + "ffn.w1"], g[pre + "ffn.b1"] = _linear_backward(fin, dact, p[pre + "ffn.w1"])
            dln2, g[pre + "ln2.scale"], g[pre + "ln2.shift"] = _layer_norm_backward(
                dfin, xhat2, inv2, p[pre + "ln2.scale"]
            )
            dx = dx + dln2
            # attention block
            dc, g[pre + "attn.wo"], g[pre + "attn.bo"] = _linear_backward(c, dx, p[pre + "attn.wo"])
            dch = _split_heads(dc, cfg.n_heads)
            datt = dch @ vh.transpose(0, 1, 3, 2)
            dvh = att.transpose(0, 1, 3, 2) @ dch
            ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            ds *= scale
            dqh = ds @ kh
            dkh = ds.transpose(0, 1, 3, 2) @ qh
            dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
            da_q, g[pre + "attn.wq"], g[pre + "attn.bq"] = _linear_backward(a, dq, p[pre + "attn.wq"])
            da_k, g[pre + "attn.wk"], g[pre + "attn.bk"] = _linear_backward(a, dk, p[pre + "attn.wk"])
            da_v, g[pre + "attn.wv"], g[pre + "attn.bv"] = _linear_backward(a, dv, p[pre + "attn.wv"])
            dln1, g[pre + "ln1.scale"], g[pre + "ln1.shift"] = _layer_norm_backward(
                da_q + da_k + da_v, xhat1, inv1, p[pre + "ln1.scale"]
            )
            dx = dx + dln1
        np.add.at(g["tok_emb"], ids.reshape(-1), dx.reshape(-1, cfg.d_model))
        g["pos_emb"][:n] = dx.sum(axis=0)
        return g


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def forward_backward(
    encoder: Encoder,
    w_doc: np.ndarray,
    batch: Sequence,
    freeze_encoder: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean negative log-likelihood of the targets under the docid softmax.

    batch items carry .tokens and .target (a TrainingPair works). Gradients
    cover every encoder parameter plus the docid matrix under key "w_doc";
    with freeze_encoder only "w_doc" is produced.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    n_docs = w_doc.shape[1]
    targets = np.array([p.target for p in batch], dtype=np.int64)
    if targets.min() < 0 or targets.max() >= n_docs:
        raise ValueError("batch targets a docid outside the corpus")
    cls_vec, cache = encoder.forward_batch(
        [p.tokens for p in batch], need_cache=not freeze_encoder
    )
    logits = cls_vec @ w_doc
    zmax = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True)) + zmax
    losses = lse[:, 0] - logits[np.arange(len(batch)), targets]
    bad = np.flatnonzero(~np.isfinite(losses))
    if bad.size:
        raise FloatingPointError(f"non-finite loss at batch index {int(bad[0])}")
    dlogits = np.exp(logits - lse)
    dlogits[np.arange(len(batch)), targets] -= 1.0
    dlogits /= len(batch)
    dlogits = dlogits.astype(encoder.dtype)
    gw = cls_vec.T @ dlogits
    if freeze_encoder:
        grads: dict[str, np.ndarray] = {}
    else:
        grads = encoder.backward_batch(cache, dlogits @ w_doc.T)
    grads["w_doc"] = gw
    return float(losses.mean()), grads


@dataclass
class AdamWHyper:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def adamw_init(params: dict[str, np.ndarray]) -> AdamWState:
    return AdamWState(
        step=0,
        m={k: np.zeros_like(a) for k, a in params.items()},
        v={k: np.zeros_like(a) for k, a in params.items()},
    )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    hyper: AdamWHyper,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One decoupled-weight-decay Adam update with bias correction.

    Pure function: inputs are left untouched and fresh arrays are returned,
    so repeating the call with the same inputs is bit-identical.
    """
    if set(grads) != set(params):
        raise ValueError("gradient keys do not match parameter keys")
    t = state.step + 1
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        gk = grads[k]
        if gk.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for '{k}'")
        m = hyper.beta1 * state.m[k] + (1.0 - hyper.beta1) * gk
        v = hyper.beta2 * state.v[k] + (1.0 - hyper.beta2) * gk * gk
        update = (m / c1) / (np.sqrt(v / c2) + hyper.eps) + hyper.weight_decay * p
        new_p[k] = (p - hyper.lr * update).astype(p.dtype)
        new_m[k] = m.astype(p.dtype)
        new_v[k] = v.astype(p.dtype)
    return new_p, AdamWState(step=t, m=new_m, v=new_v)


def finite_diff_check(
    loss_and_grad: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    eps: float = 1e-4,
    max_coords_per_param: int = 4,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> tuple[float, dict[str, float]]:
    """Compare analytic gradients to central finite differences.

    Samples up to max_coords_per_param coordinates from every parameter
    array, perturbs each by +/-eps, and reports the worst relative error
    overall and per parameter. The loss callable must be pure.
    """
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    rng = rng or np.random.default_rng(0)
    _, grads = loss_and_grad(params)
    worst = 0.0
    per_param: dict[str, float] = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        k = min(max_coords_per_param, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        err = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            lp = loss_and_grad(params)[0]
            flat[c] = orig - eps
            lm = loss_and_grad(params)[0]
            flat[c] = orig
            numeric = (lp - lm) / (2.0 * eps)
            analytic = float(grads[name].reshape(-1)[c])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            err = max(err, rel)
        per_param[name] = err
        worst = max(worst, err)
    return worst, per_param
