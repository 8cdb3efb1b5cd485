"""Attention building blocks shared by all encoders.

Every function takes and returns Tensors and supports arbitrary leading batch
dimensions; masks are plain numpy bool arrays over the sequence axis.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, masked_softmax, matmul, softmax


def xavier(rng, fan_in, fan_out, shape=None):
    """Glorot-uniform matrix init; `shape` defaults to (fan_in, fan_out)."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


def attention_pool(values, w, q, mask=None, allow_empty=False):
    """Additive attention pooling: softmax_i(q . tanh(w v_i)) weighted sum.

    values: [..., T, d]; w: [a, d]; q: [a]; mask: bool [..., T] or None.
    Masked positions get weight exactly 0. A row with nothing unmasked is an
    error unless allow_empty, in which case it pools to the zero vector.
    """
    values = Tensor.as_tensor(values)
    t_len = values.shape[-2]
    if mask is None:
        mask = np.ones(values.shape[:-1], dtype=bool)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), values.shape[:-1])
    if not allow_empty and not mask.any(axis=-1).all():
        raise ValueError("attention_pool over a fully masked sequence")
    if t_len == 0:
        raise ValueError("attention_pool over an empty sequence")

    w = Tensor.as_tensor(w)
    q = Tensor.as_tensor(q)
    scores = matmul(matmul(values, w.T).tanh(), q.reshape(-1, 1))  # [..., T, 1]
    alphas = masked_softmax(scores.reshape(scores.shape[:-1]), mask, axis=-1)
    pooled = (alphas.reshape(alphas.shape + (1,)) * values).sum(axis=-2)
    return pooled, alphas


def multi_head_self_attention(x, heads, params, mask=None, prefix=""):
    """Scaled dot-product self-attention, heads concatenated.

    x: [..., T, d_in]; params holds f"{prefix}Wq/Wk/Wv", each [d_in, d_out]
    with d_out divisible by heads; mask marks real (non-padding) positions and
    is applied to the keys.
    """
    x = Tensor.as_tensor(x)
    wq, wk, wv = params[prefix + "Wq"], params[prefix + "Wk"], params[prefix + "Wv"]
    d_out = wq.shape[1]
    if d_out % heads != 0:
        raise ValueError(f"head count {heads} does not divide output dim {d_out}")
    head_dim = d_out // heads
    t_len = x.shape[-2]
    lead = x.shape[:-2]

    def split_heads(t):
        return t.reshape(lead + (t_len, heads, head_dim)).swapaxes(-3, -2)

    q = split_heads(matmul(x, wq))
    k = split_heads(matmul(x, wk))
    v = split_heads(matmul(x, wv))
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(head_dim))  # [..., heads, T, T]
    if mask is None:
        alphas = softmax(scores, axis=-1)
    else:
        key_mask = np.asarray(mask, dtype=bool).reshape(lead + (1, 1, t_len))
        alphas = masked_softmax(scores, np.broadcast_to(key_mask, scores.shape), axis=-1)
    out = matmul(alphas, v)  # [..., heads, T, head_dim]
    return out.swapaxes(-3, -2).reshape(lead + (t_len, d_out))


def gru_cell(message, state, params, prefix):
    """Standard GRU update h' = (1-z) h + z h~ driven by a summed message."""
    wz, uz, bz = params[prefix + "Wz"], params[prefix + "Uz"], params[prefix + "bz"]
    wr, ur, br = params[prefix + "Wr"], params[prefix + "Ur"], params[prefix + "br"]
    wh, uh, bh = params[prefix + "Wh"], params[prefix + "Uh"], params[prefix + "bh"]
    z = (matmul(message, wz) + matmul(state, uz) + bz).sigmoid()
    r = (matmul(message, wr) + matmul(state, ur) + br).sigmoid()
    candidate = (matmul(message, wh) + matmul(r * state, uh) + bh).tanh()
    return (1.0 - z) * state + z * candidate


def fuse_gate(neighbor, chain, params, prefix="gate."):
    """Sigmoid gate blending neighbor and chain vectors elementwise."""
    w1, w2, b = params[prefix + "W1"], params[prefix + "W2"], params[prefix + "b"]
    gate = (matmul(neighbor, w1) + matmul(chain, w2) + b).sigmoid()
    fused = (1.0 - gate) * neighbor + gate * chain
    return fused, gate
