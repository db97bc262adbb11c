"""Minimal dense neural layers with explicit forward/backward pairs.

Everything runs in float64 numpy.  Each forward returns ``(out, cache)``
and the matching backward consumes ``(dout, cache)``; parameter gradients
come back in dicts keyed like the parameter dicts.  No autograd: the
backward passes are what the finite-difference tests certify.
"""

from __future__ import annotations

import numpy as np


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def linear_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def tanh_forward(x: np.ndarray):
    out = np.tanh(x)
    return out, out


def tanh_backward(dout: np.ndarray, out: np.ndarray):
    return dout * (1.0 - out * out)


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, inv, gain = cache
    dxhat = dout * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    return dx, dgain, dbias


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator | None):
    """Inverted dropout; identity when rate is 0 or no generator is given."""
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dout: np.ndarray, keep):
    if keep is None:
        return dout
    return dout * keep


def attention_forward(x: np.ndarray, p: dict, prefix: str, heads: int):
    """Multi-head scaled dot-product self-attention over the node sequence."""
    n, d = x.shape
    dh = d // heads
    q, _ = linear_forward(x, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    k, _ = linear_forward(x, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v, _ = linear_forward(x, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    qh = q.reshape(n, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(n, heads, dh).transpose(1, 0, 2)
    vh = v.reshape(n, heads, dh).transpose(1, 0, 2)
    scale = 1.0 / np.sqrt(dh)
    logits = (qh @ kh.transpose(0, 2, 1)) * scale
    probs = softmax(logits, axis=-1)
    ctx = probs @ vh
    merged = ctx.transpose(1, 0, 2).reshape(n, d)
    out, _ = linear_forward(merged, p[f"{prefix}.wo"], p[f"{prefix}.bo"])
    cache = (x, qh, kh, vh, probs, merged, p, prefix, heads, scale)
    return out, cache


def attention_backward(dout: np.ndarray, cache):
    x, qh, kh, vh, probs, merged, p, prefix, heads, scale = cache
    n, d = x.shape
    dh = d // heads
    grads = {}
    dmerged, grads[f"{prefix}.wo"], grads[f"{prefix}.bo"] = linear_backward(
        dout, (merged, p[f"{prefix}.wo"])
    )
    dctx = dmerged.reshape(n, heads, dh).transpose(1, 0, 2)
    dprobs = dctx @ vh.transpose(0, 2, 1)
    dvh = probs.transpose(0, 2, 1) @ dctx
    dlogits = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dqh = (dlogits @ kh) * scale
    dkh = (dlogits.transpose(0, 2, 1) @ qh) * scale
    dq = dqh.transpose(1, 0, 2).reshape(n, d)
    dk = dkh.transpose(1, 0, 2).reshape(n, d)
    dv = dvh.transpose(1, 0, 2).reshape(n, d)
    dxq, grads[f"{prefix}.wq"], grads[f"{prefix}.bq"] = linear_backward(dq, (x, p[f"{prefix}.wq"]))
    dxk, grads[f"{prefix}.wk"], grads[f"{prefix}.bk"] = linear_backward(dk, (x, p[f"{prefix}.wk"]))
    dxv, grads[f"{prefix}.wv"], grads[f"{prefix}.bv"] = linear_backward(dv, (x, p[f"{prefix}.wv"]))
    return dxq + dxk + dxv, grads


def block_forward(
    x: np.ndarray,
    p: dict,
    prefix: str,
    heads: int,
    dropout: float,
    rng: np.random.Generator | None,
):
    """Pre-norm transformer block: attention then feed-forward, both residual.

    With all block weights at zero the output equals the input exactly.
    """
    h1, ln1_cache = layer_norm_forward(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    att, att_cache = attention_forward(h1, p, f"{prefix}.attn", heads)
    att_drop, do1 = dropout_forward(att, dropout, rng)
    x1 = x + att_drop
    h2, ln2_cache = layer_norm_forward(x1, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    f1, f1_cache = linear_forward(h2, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"])
    act, act_cache = tanh_forward(f1)
    f2, f2_cache = linear_forward(act, p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])
    ffn_drop, do2 = dropout_forward(f2, dropout, rng)
    out = x1 + ffn_drop
    cache = (ln1_cache, att_cache, do1, ln2_cache, f1_cache, act_cache, f2_cache, do2, prefix)
    return out, cache


def block_backward(dout: np.ndarray, cache):
    ln1_cache, att_cache, do1, ln2_cache, f1_cache, act_cache, f2_cache, do2, prefix = cache
    grads = {}
    dffn = dropout_backward(dout, do2)
    dact, grads[f"{prefix}.ffn.w2"], grads[f"{prefix}.ffn.b2"] = linear_backward(dffn, f2_cache)
    df1 = tanh_backward(dact, act_cache)
    dh2, grads[f"{prefix}.ffn.w1"], grads[f"{prefix}.ffn.b1"] = linear_backward(df1, f1_cache)
    dx1, grads[f"{prefix}.ln2.g"], grads[f"{prefix}.ln2.b"] = layer_norm_backward(dh2, ln2_cache)
    dx1 = dx1 + dout
    datt = dropout_backward(dx1, do1)
    dh1, att_grads = attention_backward(datt, att_cache)
    grads.update(att_grads)
    dx, grads[f"{prefix}.ln1.g"], grads[f"{prefix}.ln1.b"] = layer_norm_backward(dh1, ln1_cache)
    return dx + dx1, grads
