"""Dense float64 tensors with reverse-mode gradients.

A Tensor wraps a numpy array (rank <= 3). Ops are module-level functions that
record a backward closure on the output when any input requires gradients and
grad mode is on; `backward(loss)` replays the tape in reverse topological
order. Model code uses the fused ops (linear, rmsnorm, rope, mha_causal,
cross_entropy) so tapes stay short; elementwise operators exist mainly for
composition and tests.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from duplexlab.nn import kernels


class GraphError(ValueError):
    """Contract violation in graph construction or backward()."""


_GRAD_ENABLED = True
_DEBUG_CHECKS = False


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_debug_checks(on: bool):
    """When on, every op asserts its output is finite."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(on)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise GraphError(f"rank {arr.ndim} > 3 not supported")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def node_id(self):
        return id(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError("item() on non-scalar tensor")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g):
        if self.grad is None:
            # copy: g may be a view into another tensor's gradient buffer
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _wrap(data, parents, bwd):
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise GraphError("non-finite value produced by op")
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, rg)
    if rg:
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def backward(loss: Tensor):
    """Accumulate gradients of `loss` into every reachable requires-grad tensor."""
    if loss.data.size != 1:
        raise GraphError("backward() needs a scalar loss")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)


# ---------------------------------------------------------------------------
# elementwise / reduction ops

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(dy):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(dy, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(dy, b.data.shape))

    return _wrap(out, (a, b), bwd)


def _unbroadcast(dy, shape):
    if dy.shape == shape:
        return dy
    extra = dy.ndim - len(shape)
    for _ in range(extra):
        dy = dy.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and dy.shape[ax] != 1:
            dy = dy.sum(axis=ax, keepdims=True)
    return dy


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(dy):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(dy * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(dy * a.data, b.data.shape))

    return _wrap(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * c

    def bwd(dy):
        if a.requires_grad:
            a.accumulate_grad(dy * c)

    return _wrap(out, (a,), bwd)


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """x * s with s a single-element tensor (scalar gate)."""
    sv = float(s.data.reshape(-1)[0])
    out = x.data * sv

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(dy * sv)
        if s.requires_grad:
            s.accumulate_grad(np.full_like(s.data, np.sum(dy * x.data)))

    return _wrap(out, (x, s), bwd)


def tsum(a: Tensor) -> Tensor:
    out = np.array(a.data.sum())

    def bwd(dy):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(dy)))

    return _wrap(out, (a,), bwd)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.array(a.data.sum() / n)

    def bwd(dy):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(dy) / n))

    return _wrap(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(dy):
        if a.requires_grad:
            a.accumulate_grad(dy * out * (1.0 - out))

    return _wrap(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(dy):
        if a.requires_grad:
            a.accumulate_grad(dy * (1.0 - out * out))

    return _wrap(out, (a,), bwd)


def silu(a: Tensor) -> Tensor:
    out = kernels.silu(a.data)

    def bwd(dy):
        if a.requires_grad:
            a.accumulate_grad(kernels.silu_bwd(a.data, dy))

    return _wrap(out, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def bwd(dy):
        if a.data.ndim == 2:
            if a.requires_grad:
                a.accumulate_grad(dy @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ dy)
        else:  # batched 3D
            if a.requires_grad:
                a.accumulate_grad(dy @ b.data.transpose(0, 2, 1))
            if b.requires_grad:
                b.accumulate_grad(a.data.transpose(0, 2, 1) @ dy)

    return _wrap(out, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(dy @ w.data.T)
        if w.requires_grad:
            w.accumulate_grad(x.data.T @ dy)
        if b is not None and b.requires_grad:
            b.accumulate_grad(dy.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _wrap(out, parents, bwd)


def lora_linear(x: Tensor, w: Tensor, a: Tensor, b: Tensor,
                scale: float) -> Tensor:
    """Fused frozen-base + low-rank path: x@w + scale * (x@a)@b."""
    xa = x.data @ a.data
    out = x.data @ w.data + scale * (xa @ b.data)

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(dy @ w.data.T + scale * ((dy @ b.data.T) @ a.data.T))
        if w.requires_grad:
            w.accumulate_grad(x.data.T @ dy)
        if a.requires_grad:
            a.accumulate_grad(scale * (x.data.T @ (dy @ b.data.T)))
        if b.requires_grad:
            b.accumulate_grad(scale * (xa.T @ dy))

    return _wrap(out, (x, w, a, b), bwd)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def bwd(dy):
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids, dy)
            table.accumulate_grad(g)

    return _wrap(out, (table,), bwd)


# ---------------------------------------------------------------------------
# shape plumbing

def concat_rows(parts: list[Tensor]) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def bwd(dy):
        off = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate_grad(dy[off:off + n])
            off += n

    return _wrap(out, tuple(parts), bwd)


def concat_cols(parts: list[Tensor]) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]

    def bwd(dy):
        off = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate_grad(dy[:, off:off + n])
            off += n

    return _wrap(out, tuple(parts), bwd)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[start:stop].copy()

    def bwd(dy):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[start:stop] = dy
            x.accumulate_grad(g)

    return _wrap(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(dy.reshape(x.data.shape))

    return _wrap(out, (x,), bwd)


def repeat_rows(x: Tensor, g: int) -> Tensor:
    """Each row repeated g times: (N, d) -> (N*g, d)."""
    out = np.repeat(x.data, g, axis=0)

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(dy.reshape(x.data.shape[0], g, -1).sum(axis=1))

    return _wrap(out, (x,), bwd)


def mean_row_groups(x: Tensor, g: int) -> Tensor:
    """Mean over consecutive groups of g rows: (N*g, d) -> (N, d)."""
    n = x.data.shape[0] // g
    out = x.data.reshape(n, g, -1).mean(axis=1)

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(np.repeat(dy / g, g, axis=0))

    return _wrap(out, (x,), bwd)


def to_heads(x: Tensor, n_heads: int) -> Tensor:
    """(T, d) -> (H, T, d/H)."""
    t, d = x.data.shape
    hd = d // n_heads
    out = np.ascontiguousarray(x.data.reshape(t, n_heads, hd).transpose(1, 0, 2))

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(dy.transpose(1, 0, 2).reshape(t, d))

    return _wrap(out, (x,), bwd)


def from_heads(x: Tensor) -> Tensor:
    """(H, T, hd) -> (T, H*hd)."""
    h, t, hd = x.data.shape
    out = x.data.transpose(1, 0, 2).reshape(t, h * hd)

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(
                np.ascontiguousarray(dy.reshape(t, h, hd).transpose(1, 0, 2)))

    return _wrap(out, (x,), bwd)


# ---------------------------------------------------------------------------
# fused neural ops

def rmsnorm(x: Tensor, g: Tensor, eps: float = 1e-6) -> Tensor:
    y, rinv = kernels.rmsnorm(np.ascontiguousarray(x.data), g.data, eps)

    def bwd(dy):
        dx, dg = kernels.rmsnorm_bwd(
            np.ascontiguousarray(x.data), g.data, rinv,
            np.ascontiguousarray(dy))
        if x.requires_grad:
            x.accumulate_grad(dx)
        if g.requires_grad:
            g.accumulate_grad(dg)

    return _wrap(y, (x, g), bwd)


def rope(x: Tensor, positions, base: float = 10000.0) -> Tensor:
    """Rotary position embedding over the last dim; x is (T, d) or (H, T, d)."""
    if x.data.shape[-1] % 2 != 0:
        raise GraphError("rope needs an even feature dim")
    pos = np.asarray(positions, dtype=np.float64)
    out = kernels.rope_apply(np.ascontiguousarray(x.data), pos, base, 1.0)

    def bwd(dy):
        if x.requires_grad:
            x.accumulate_grad(
                kernels.rope_apply(np.ascontiguousarray(dy), pos, base, -1.0))

    return _wrap(out, (x,), bwd)


def mha_causal(q: Tensor, k: Tensor, v: Tensor, qpos) -> Tensor:
    """Multi-head causal attention: q (H,Tq,hd), k/v (H,Tk,hd).

    Query i may attend keys j <= qpos[i]; key j sits at position j.
    """
    qpos = np.asarray(qpos, dtype=np.int64)
    hd = q.data.shape[2]
    sc = 1.0 / math.sqrt(hd)
    scores = np.ascontiguousarray(q.data @ k.data.transpose(0, 2, 1) * sc)
    probs = kernels.softmax_causal(scores, qpos)
    out = probs @ v.data

    def bwd(dy):
        if v.requires_grad:
            v.accumulate_grad(probs.transpose(0, 2, 1) @ dy)
        dprobs = np.ascontiguousarray(dy @ v.data.transpose(0, 2, 1))
        dscores = kernels.softmax_causal_bwd(probs, dprobs)
        if q.requires_grad:
            q.accumulate_grad(dscores @ k.data * sc)
        if k.requires_grad:
            k.accumulate_grad(dscores.transpose(0, 2, 1) @ q.data * sc)

    return _wrap(out, (q, k, v), bwd)


def cross_entropy_sum(logits: Tensor, targets, weights) -> Tensor:
    """Sum over rows of weight * negative-log-likelihood."""
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.ascontiguousarray(np.asarray(weights, dtype=np.float64))
    total, probs = kernels.ce_rows(
        np.ascontiguousarray(logits.data), targets, weights)

    def bwd(dy):
        if logits.requires_grad:
            logits.accumulate_grad(
                kernels.ce_rows_bwd(probs, targets, weights, float(dy)))

    return _wrap(np.array(total), (logits,), bwd)
