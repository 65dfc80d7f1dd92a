"""Numpy implementations of the hot row-wise kernels.

Shared signature contract with the compiled extension (`_ck`): all arrays are
float64 and C-contiguous, int arrays are int64. `duplexlab.nn.kernels`
selects one backend at import time.
"""

import numpy as np

BACKEND = "numpy"


def softmax_causal(scores, qpos):
    """Row softmax of `scores` (H, Tq, Tk) restricted to keys j <= qpos[i].

    Masked-out entries are exactly zero in the result.
    """
    H, Tq, Tk = scores.shape
    mask = np.arange(Tk)[None, :] > qpos[:, None]  # (Tq, Tk) True = disallowed
    s = np.where(mask[None, :, :], -np.inf, scores)
    m = s.max(axis=2, keepdims=True)
    e = np.exp(s - m)
    e[np.broadcast_to(mask[None, :, :], e.shape)] = 0.0
    denom = e.sum(axis=2, keepdims=True)
    return e / denom


def softmax_causal_bwd(probs, dprobs):
    dot = np.einsum("hij,hij->hi", probs, dprobs)[:, :, None]
    return probs * (dprobs - dot)


def rmsnorm(x, g, eps):
    ms = np.mean(x * x, axis=1) + eps
    rinv = 1.0 / np.sqrt(ms)
    y = x * rinv[:, None] * g[None, :]
    return y, rinv


def rmsnorm_bwd(x, g, rinv, dy):
    d = x.shape[1]
    gdy = dy * g[None, :]
    proj = np.sum(gdy * x, axis=1)  # (N,)
    dx = gdy * rinv[:, None] - x * (proj * rinv**3 / d)[:, None]
    dg = np.sum(x * rinv[:, None] * dy, axis=0)
    return dx, dg


def rope_apply(x, pos, base, sign):
    """Rotate feature pairs (2i, 2i+1) of `x` by angle sign*pos/base^(2i/d).

    `x` is (T, d) or (H, T, d) with d even; `pos` has length T.
    """
    d = x.shape[-1]
    half = d // 2
    inv_freq = base ** (-np.arange(half, dtype=np.float64) * 2.0 / d)
    ang = sign * pos[:, None] * inv_freq[None, :]  # (T, half)
    cos, sin = np.cos(ang), np.sin(ang)
    x0 = x[..., 0::2]
    x1 = x[..., 1::2]
    y = np.empty_like(x)
    y[..., 0::2] = x0 * cos - x1 * sin
    y[..., 1::2] = x0 * sin + x1 * cos
    return y


def ce_rows(logits, targets, weights):
    """Weighted cross-entropy over rows: returns (sum_i w_i * nll_i, probs)."""
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    denom = e.sum(axis=1, keepdims=True)
    probs = e / denom
    n = logits.shape[0]
    nll = -np.log(probs[np.arange(n), targets])
    return float(np.dot(weights, nll)), probs


def ce_rows_bwd(probs, targets, weights, upstream):
    dlogits = probs * (upstream * weights)[:, None]
    n = probs.shape[0]
    dlogits[np.arange(n), targets] -= upstream * weights
    return dlogits


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    return x * _sigmoid(x)


def silu_bwd(x, dy):
    sig = _sigmoid(x)
    return dy * sig * (1.0 + x * (1.0 - sig))
