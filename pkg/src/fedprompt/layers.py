"""Hand-written forward/backward passes for the closed set of layer types.

The text encoder is a fixed architecture (linear, layer-norm, causal
multi-head self-attention, pointwise nonlinearity, embedding lookup), so
reverse mode is implemented as paired ``*_forward``/``*_backward`` functions
with explicit caches instead of a general tape. Parameter gradients are only
computed when requested; the prompt-only training path never requests them,
so gradients flow *through* frozen layers untouched.

Array convention: activations are (B, T, D) float32; weight matrices map
row-vectors, y = x @ W + b.
"""

from __future__ import annotations

import numpy as np

from fedprompt import _kernels as K
from fedprompt.errors import ShapeError
from fedprompt.tensor import DualTensor, F32, Tensor

NEG_INF = F32(-1e9)


def _mm(a, b):
    return K.matmul(a, b)


def _mm_nt(a, b):
    """a @ b.T for 2-D operands."""
    return K.bmm_nt(a[None], b[None])[0]


def _mm_tn(a, b):
    """a.T @ b for 2-D operands."""
    return K.bmm_tn(a[None], b[None])[0]


# ---------------------------------------------------------------- linear

def linear_forward(x, w, b=None):
    bt = x.shape[:-1]
    xf = x.reshape(-1, x.shape[-1])
    y = _mm(xf, w)
    if b is not None:
        y = y + b
    return y.reshape(*bt, w.shape[1]), (xf, w)


def linear_backward(dy, cache, with_params=False):
    xf, w = cache
    dyf = np.ascontiguousarray(dy.reshape(-1, dy.shape[-1]))
    dx = _mm_nt(dyf, w).reshape(*dy.shape[:-1], w.shape[0])
    if not with_params:
        return dx, None
    dw = _mm_tn(xf, dyf)
    db = dyf.sum(axis=0, dtype=F32)
    return dx, (dw, db)


# ------------------------------------------------------------- layer norm

def layernorm_forward(x, gamma, beta):
    shp = x.shape
    y, xhat, rstd = K.layernorm_forward(
        np.ascontiguousarray(x.reshape(-1, shp[-1])), gamma, beta
    )
    return y.reshape(shp), (xhat, rstd, gamma, shp)


def layernorm_backward(dy, cache, with_params=False):
    xhat, rstd, gamma, shp = cache
    dx, dgamma, dbeta = K.layernorm_backward(
        np.ascontiguousarray(dy.reshape(-1, shp[-1])), xhat, rstd, gamma
    )
    return dx.reshape(shp), ((dgamma, dbeta) if with_params else None)


# ------------------------------------------------------------ nonlinearity

def quickgelu_forward(x):
    shp = x.shape
    y = K.quickgelu_forward(np.ascontiguousarray(x.reshape(-1, shp[-1])))
    return y.reshape(shp), (x,)


def quickgelu_backward(dy, cache):
    (x,) = cache
    shp = x.shape
    dx = K.quickgelu_backward(
        np.ascontiguousarray(dy.reshape(-1, shp[-1])),
        np.ascontiguousarray(x.reshape(-1, shp[-1])),
    )
    return dx.reshape(shp), None


# ---------------------------------------------------- multi-head attention

def _split_heads(x, n_heads):
    b, t, d = x.shape
    dh = d // n_heads
    return np.ascontiguousarray(
        x.reshape(b, t, n_heads, dh).transpose(0, 2, 1, 3).reshape(b * n_heads, t, dh)
    )


def _merge_heads(x, b, n_heads):
    g, t, dh = x.shape
    return np.ascontiguousarray(
        x.reshape(b, n_heads, t, dh).transpose(0, 2, 1, 3).reshape(b, t, n_heads * dh)
    )


def causal_mask(t: int) -> np.ndarray:
    """Additive (T,T) mask: 0 on/below the diagonal, -1e9 above."""
    m = np.zeros((t, t), dtype=F32)
    m[np.triu_indices(t, k=1)] = NEG_INF
    return m


def attention_forward(x, wq, bq, wk, bk, wv, bv, wo, bo, n_heads, causal=True):
    b, t, d = x.shape
    if d % n_heads != 0:
        raise ShapeError(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    scale = F32(1.0 / np.sqrt(dh))

    q, cq = linear_forward(x, wq, bq)
    k, ck = linear_forward(x, wk, bk)
    v, cv = linear_forward(x, wv, bv)
    qh, kh, vh = (_split_heads(a, n_heads) for a in (q, k, v))

    scores = K.bmm_nt(qh, kh) * scale
    if causal:
        scores = scores + causal_mask(t)[None, :, :]
    attn = K.softmax_rows(
        np.ascontiguousarray(scores.reshape(-1, t))
    ).reshape(b * n_heads, t, t)

    ctx = K.bmm(attn, vh)
    merged = _merge_heads(ctx, b, n_heads)
    y, co = linear_forward(merged, wo, bo)
    cache = (cq, ck, cv, co, qh, kh, vh, attn, scale, b, n_heads)
    return y, cache


def attention_backward(dy, cache, with_params=False):
    cq, ck, cv, co, qh, kh, vh, attn, scale, b, n_heads = cache
    t = attn.shape[1]

    dmerged, dwo = linear_backward(dy, co, with_params)
    dctx = _split_heads(dmerged, n_heads)

    dattn = K.bmm_nt(dctx, vh)
    dvh = K.bmm_tn(attn, dctx)
    dscores = K.softmax_backward_rows(
        np.ascontiguousarray(dattn.reshape(-1, t)),
        np.ascontiguousarray(attn.reshape(-1, t)),
    ).reshape(b * n_heads, t, t)

    dqh = K.bmm(dscores, kh) * scale
    dkh = K.bmm_tn(dscores, qh) * scale

    dq = _merge_heads(np.ascontiguousarray(dqh), b, n_heads)
    dk = _merge_heads(dkh, b, n_heads)
    dv = _merge_heads(dvh, b, n_heads)

    dxq, dwq = linear_backward(dq, cq, with_params)
    dxk, dwk = linear_backward(dk, ck, with_params)
    dxv, dwv = linear_backward(dv, cv, with_params)
    dx = dxq + dxk + dxv
    if not with_params:
        return dx, None
    return dx, (dwq, dwk, dwv, dwo)


# -------------------------------------------------------- embedding lookup

def embedding_forward(table, ids):
    ids = np.asarray(ids)
    return table[ids].astype(F32, copy=True), (table.shape, ids)


def embedding_backward(dy, cache):
    shape, ids = cache
    dtable = np.zeros(shape, dtype=F32)
    np.add.at(dtable, ids, dy)
    return None, (dtable,)


# --------------------------------------------- spec-surface combined driver

def layer_forward_backward(kind: str, x: DualTensor, params: dict, upstream) -> DualTensor:
    """Run one layer forward, then backward with ``upstream``, accumulating
    the input gradient into ``x``. Frozen parameters receive no gradients."""
    a = x.value.data
    if kind == "linear":
        y, cache = linear_forward(a, params["w"], params.get("b"))
        dx, _ = linear_backward(np.asarray(upstream, dtype=F32), cache)
    elif kind == "layer_norm":
        y, cache = layernorm_forward(a, params["gamma"], params["beta"])
        dx, _ = layernorm_backward(np.asarray(upstream, dtype=F32), cache)
    elif kind == "attention":
        y, cache = attention_forward(
            a, params["wq"], params["bq"], params["wk"], params["bk"],
            params["wv"], params["bv"], params["wo"], params["bo"],
            params["n_heads"], params.get("causal", True),
        )
        dx, _ = attention_backward(np.asarray(upstream, dtype=F32), cache)
    elif kind == "quickgelu":
        y, cache = quickgelu_forward(a)
        dx, _ = quickgelu_backward(np.asarray(upstream, dtype=F32), cache)
    else:
        raise ShapeError(f"unknown layer kind {kind!r}")
    out = DualTensor(Tensor(y, validate=False))
    x.accumulate(dx)
    return out
