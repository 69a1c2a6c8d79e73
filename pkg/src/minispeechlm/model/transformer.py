"""A small pre-norm decoder-only transformer over multi-stream token grids.

Input row ``t`` embeds each stream's token with that stream's table and sums
them, plus a learned position embedding. Each stream has its own output head;
the logits at row ``t`` predict row ``t + 1``.

Parameters live in a flat ``dict[str, ndarray]``; gradients use the same keys.
"""
from __future__ import annotations

import math

import numpy as np

from .config import ModelConfig

_GELU_C = math.sqrt(2.0 / math.pi)
LN_EPS = 1e-5


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(config.seed)
    dt = np.dtype(config.dtype)
    d, V, Q, F = config.d_model, config.vocab_size, config.n_q, config.ff_mult * config.d_model
    std = 0.02
    proj_std = std / math.sqrt(2 * config.n_layers)

    def normal(shape, s=std):
        return (rng.standard_normal(shape) * s).astype(dt)

    p = {
        "embed": normal((Q, V, d)),
        "pos": normal((config.max_T, d)),
    }
    for layer in range(config.n_layers):
        pre = f"layers.{layer}."
        p[pre + "ln1.g"] = np.ones(d, dt)
        p[pre + "ln1.b"] = np.zeros(d, dt)
        p[pre + "attn.wq"] = normal((d, d))
        p[pre + "attn.wk"] = normal((d, d))
        p[pre + "attn.wv"] = normal((d, d))
        p[pre + "attn.wo"] = normal((d, d), proj_std)
        p[pre + "ln2.g"] = np.ones(d, dt)
        p[pre + "ln2.b"] = np.zeros(d, dt)
        p[pre + "ff.w1"] = normal((d, F))
        p[pre + "ff.b1"] = np.zeros(F, dt)
        p[pre + "ff.w2"] = normal((F, d), proj_std)
        p[pre + "ff.b2"] = np.zeros(d, dt)
    p["ln_f.g"] = np.ones(d, dt)
    p["ln_f.b"] = np.zeros(d, dt)
    p["head.w"] = normal((Q, d, V))
    p["head.b"] = np.zeros((Q, V), dt)
    return p


def count_params(params) -> int:
    return int(sum(v.size for v in params.values()))


# -- primitives --------------------------------------------------------------


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layernorm_back(dy, g, cache):
    xhat, rstd = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(h):
    t = np.tanh(_GELU_C * (h + 0.044715 * (h * h * h)))
    return 0.5 * h * (1.0 + t), t


def _gelu_back(dy, h, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * h * h)
    return dy * (0.5 * (1.0 + t) + 0.5 * h * dt)


def _softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _causal_mask(T):
    return np.triu(np.ones((T, T), dtype=bool), k=1)


def _split_heads(x, H):
    B, T, d = x.shape
    return x.reshape(B, T, H, d // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _check_input(config: ModelConfig, grid):
    grid = np.asarray(grid)
    if grid.ndim == 2:
        grid = grid[None]
    if grid.ndim != 3 or grid.shape[2] != config.n_q:
        raise ValueError(f"expected a (B, T, {config.n_q}) grid, got shape {grid.shape}")
    if grid.shape[1] > config.max_T:
        raise ValueError(f"sequence length {grid.shape[1]} exceeds max_T {config.max_T}")
    if grid.size and (grid.min() < 0 or grid.max() >= config.vocab_size):
        raise ValueError(f"token ids must lie in [0, {config.vocab_size})")
    return grid


# -- forward / backward -------------------------------------------------------


def forward(params, config: ModelConfig, grid, return_cache: bool = False):
    """Logits of shape ``(B, T, n_q, V)`` (or ``(T, n_q, V)`` for a 2-d grid)."""
    squeeze = np.asarray(grid).ndim == 2
    grid = _check_input(config, grid)
    B, T, Q = grid.shape
    H, dh = config.n_heads, config.head_dim
    scale = 1.0 / math.sqrt(dh)
    mask = _causal_mask(T)

    x = params["pos"][:T][None].repeat(B, axis=0)
    for q in range(Q):
        x = x + params["embed"][q][grid[:, :, q]]
    caches = []
    for layer in range(config.n_layers):
        pre = f"layers.{layer}."
        a_in, ln1 = _layernorm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        qh = _split_heads(a_in @ params[pre + "attn.wq"], H)
        kh = _split_heads(a_in @ params[pre + "attn.wk"], H)
        vh = _split_heads(a_in @ params[pre + "attn.wv"], H)
        s = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        s[:, :, mask] = -np.inf
        att = _softmax(s)
        o = _merge_heads(att @ vh)
        x = x + o @ params[pre + "attn.wo"]
        f_in, ln2 = _layernorm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        h = f_in @ params[pre + "ff.w1"] + params[pre + "ff.b1"]
        g, tanh_h = _gelu(h)
        x = x + g @ params[pre + "ff.w2"] + params[pre + "ff.b2"]
        caches.append((a_in, ln1, qh, kh, vh, att, o, f_in, ln2, h, g, tanh_h))
    xf, lnf = _layernorm(x, params["ln_f.g"], params["ln_f.b"])
    logits = np.empty((B, T, Q, config.vocab_size), dtype=xf.dtype)
    for q in range(Q):
        logits[:, :, q] = xf @ params["head.w"][q] + params["head.b"][q]
    if squeeze:
        logits = logits[0]
    if return_cache:
        return logits, {"grid": grid, "layers": caches, "xf": xf, "lnf": lnf, "squeeze": squeeze}
    return logits


def backward(params, config: ModelConfig, cache, dlogits) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dloss/dlogits`` and the forward cache."""
    grid = cache["grid"]
    B, T, Q = grid.shape
    H, dh = config.n_heads, config.head_dim
    scale = 1.0 / math.sqrt(dh)
    dt = params["pos"].dtype
    dlogits = np.asarray(dlogits, dtype=dt)
    if cache["squeeze"]:
        dlogits = dlogits[None]
    grads = {}

    xf = cache["xf"]
    xf2 = xf.reshape(B * T, -1)
    dxf = np.zeros_like(xf)
    dW = np.empty_like(params["head.w"])
    dbh = np.empty_like(params["head.b"])
    for q in range(Q):
        dl = dlogits[:, :, q].reshape(B * T, -1)
        dW[q] = xf2.T @ dl
        dbh[q] = dl.sum(axis=0)
        dxf += (dl @ params["head.w"][q].T).reshape(B, T, -1)
    grads["head.w"], grads["head.b"] = dW, dbh
    dx, grads["ln_f.g"], grads["ln_f.b"] = _layernorm_back(dxf, params["ln_f.g"], cache["lnf"])

    for layer in reversed(range(config.n_layers)):
        pre = f"layers.{layer}."
        a_in, ln1, qh, kh, vh, att, o, f_in, ln2, h, g, tanh_h = cache["layers"][layer]
        d = a_in.shape[-1]
        # feed-forward residual branch
        grads[pre + "ff.w2"] = g.reshape(-1, g.shape[-1]).T @ dx.reshape(-1, d)
        grads[pre + "ff.b2"] = dx.reshape(-1, d).sum(axis=0)
        dh_ = _gelu_back(dx @ params[pre + "ff.w2"].T, h, tanh_h)
        grads[pre + "ff.w1"] = f_in.reshape(-1, d).T @ dh_.reshape(-1, dh_.shape[-1])
        grads[pre + "ff.b1"] = dh_.reshape(-1, dh_.shape[-1]).sum(axis=0)
        df_in = dh_ @ params[pre + "ff.w1"].T
        dxn, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _layernorm_back(
            df_in, params[pre + "ln2.g"], ln2
        )
        dx = dx + dxn
        # attention residual branch
        grads[pre + "attn.wo"] = o.reshape(-1, d).T @ dx.reshape(-1, d)
        do = _split_heads(dx @ params[pre + "attn.wo"].T, H)
        datt = do @ vh.transpose(0, 1, 3, 2)
        dvh = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
        dqh = ds @ kh
        dkh = ds.transpose(0, 1, 3, 2) @ qh
        a2 = a_in.reshape(-1, d)
        dq, dk, dv = (_merge_heads(t).reshape(-1, d) for t in (dqh, dkh, dvh))
        grads[pre + "attn.wq"] = a2.T @ dq
        grads[pre + "attn.wk"] = a2.T @ dk
        grads[pre + "attn.wv"] = a2.T @ dv
        da = (
            dq @ params[pre + "attn.wq"].T
            + dk @ params[pre + "attn.wk"].T
            + dv @ params[pre + "attn.wv"].T
        ).reshape(B, T, d)
        dxn, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _layernorm_back(
            da, params[pre + "ln1.g"], ln1
        )
        dx = dx + dxn

    dpos = np.zeros_like(params["pos"])
    dpos[:T] = dx.sum(axis=0)
    grads["pos"] = dpos
    dembed = np.zeros_like(params["embed"])
    flat = dx.reshape(B * T, -1)
    for q in range(Q):
        np.add.at(dembed[q], grid[:, :, q].reshape(-1), flat)
    grads["embed"] = dembed
    return grads


# -- incremental decoding -----------------------------------------------------


class DecodeCache:
    """Per-layer key/value rows for incremental decoding of ``B`` hypotheses."""

    def __init__(self, config: ModelConfig, batch: int):
        H, dh = config.n_heads, config.head_dim
        dt = np.dtype(config.dtype)
        self.config = config
        self.length = 0
        self.k = [np.zeros((batch, H, config.max_T, dh), dt) for _ in range(config.n_layers)]
        self.v = [np.zeros((batch, H, config.max_T, dh), dt) for _ in range(config.n_layers)]

    @property
    def batch(self) -> int:
        return self.k[0].shape[0]

    def select(self, index) -> "DecodeCache":
        """Reorder/duplicate hypotheses (beam bookkeeping)."""
        index = np.asarray(index, dtype=np.int64)
        out = DecodeCache.__new__(DecodeCache)
        out.config, out.length = self.config, self.length
        out.k = [k[index] for k in self.k]
        out.v = [v[index] for v in self.v]
        return out


def forward_rows(params, config: ModelConfig, cache: DecodeCache, rows) -> np.ndarray:
    """Append ``rows`` of shape ``(B, n, n_q)`` to the cache; logits ``(B, n, n_q, V)``.

    Matches :func:`forward` on the full prefix.
    """
    rows = _check_input(config, rows)
    B, n, Q = rows.shape
    t0 = cache.length
    if t0 + n > config.max_T:
        raise ValueError(f"sequence length {t0 + n} exceeds max_T {config.max_T}")
    H = config.n_heads
    scale = 1.0 / math.sqrt(config.head_dim)
    x = params["pos"][t0 : t0 + n][None].repeat(B, axis=0)
    for q in range(Q):
        x = x + params["embed"][q][rows[:, :, q]]
    mask = np.triu(np.ones((n, t0 + n), dtype=bool), k=t0 + 1)
    for layer in range(config.n_layers):
        pre = f"layers.{layer}."
        a_in, _ = _layernorm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        qh = _split_heads(a_in @ params[pre + "attn.wq"], H)
        cache.k[layer][:, :, t0 : t0 + n] = _split_heads(a_in @ params[pre + "attn.wk"], H)
        cache.v[layer][:, :, t0 : t0 + n] = _split_heads(a_in @ params[pre + "attn.wv"], H)
        kh = cache.k[layer][:, :, : t0 + n]
        vh = cache.v[layer][:, :, : t0 + n]
        s = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        s[:, :, mask] = -np.inf
        o = _merge_heads(_softmax(s) @ vh)
        x = x + o @ params[pre + "attn.wo"]
        f_in, _ = _layernorm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        g, _ = _gelu(f_in @ params[pre + "ff.w1"] + params[pre + "ff.b1"])
        x = x + g @ params[pre + "ff.w2"] + params[pre + "ff.b2"]
    cache.length = t0 + n
    xf, _ = _layernorm(x, params["ln_f.g"], params["ln_f.b"])
    logits = np.empty((B, n, Q, config.vocab_size), dtype=xf.dtype)
    for q in range(Q):
        logits[:, :, q] = xf @ params["head.w"][q] + params["head.b"][q]
    return logits
