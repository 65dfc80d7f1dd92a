"""User-stream routing: channel fusion (CF) and cross-attention (XA).

CF merges the three aligned streams per step:
    y = u + m_text + m_audio + sigmoid(Wg c + bg) * MLP(c),  c = [u; m_text; m_audio]
with the MLP output layer zero-initialized, so CF starts as an exact
pass-through sum.

XA keeps the user stream as external memory. Adapters inserted at configured
backbone layers attend from hidden states (queries) into the memory
(keys/values), RoPE-rotated with shared timeline indices, gated by a scalar
tanh gate initialized at zero so XA starts as an exact identity. Attention is
restricted to memory steps at-or-before the query's timeline step, which
streaming inference requires.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from duplexlab.nn import kernels
from duplexlab.nn import tensor as T
from duplexlab.nn.layers import Linear, ParamStore, RMSNorm
from duplexlab.nn.tensor import Tensor

VARIANTS = ("cf", "xa")


def place_adapters(num_layers: int, interval: int) -> list[int]:
    """1-indexed layer positions {interval, 2*interval, ...} <= num_layers."""
    if interval < 1:
        raise ValueError("adapter interval must be >= 1")
    out = list(range(interval, num_layers + 1, interval))
    if not out:
        warnings.warn(f"interval {interval} > {num_layers} layers: no adapters placed")
    return out


class ChannelFusion:
    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 d_model: int, mlp_hidden: int | None = None):
        self.d = d_model
        c = 3 * d_model
        hidden = mlp_hidden or 2 * d_model
        self.gate = Linear(store, "routing.cf.gate", c, d_model, rng, "routing")
        self.mlp1 = Linear(store, "routing.cf.mlp1", c, hidden, rng, "routing")
        self.mlp2 = Linear(store, "routing.cf.mlp2", hidden, d_model, rng,
                           "routing", zero_init=True)

    def fuse(self, u: Tensor, m_text: Tensor, m_audio: Tensor) -> Tensor:
        if not (u.shape == m_text.shape == m_audio.shape):
            raise ValueError("fusion inputs must share shape")
        c = T.concat_cols([u, m_text, m_audio])
        gated = T.mul(T.sigmoid(self.gate(c)), self.mlp2(T.silu(self.mlp1(c))))
        return T.add(T.add(T.add(u, m_text), m_audio), gated)

    def fuse_np(self, u: np.ndarray, m_text: np.ndarray, m_audio: np.ndarray) -> np.ndarray:
        c = np.concatenate([u, m_text, m_audio], axis=1)
        z = self.gate.apply_np(c)
        sig = np.empty_like(z)
        pos = z >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        sig[~pos] = ez / (1.0 + ez)
        gated = sig * self.mlp2.apply_np(kernels.silu(self.mlp1.apply_np(c)))
        return u + m_text + m_audio + gated


class XaAdapter:
    """One gated cross-attention adapter reading the user-stream memory."""

    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 layer: int, d_model: int, n_heads: int,
                 rope_base: float = 10000.0):
        name = f"routing.xa.layers.{layer}"
        self.d = d_model
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.rope_base = rope_base
        self.norm = RMSNorm(store, f"{name}.norm", d_model, "routing")
        self.wq = Linear(store, f"{name}.wq", d_model, d_model, rng, "routing", bias=False)
        self.wk = Linear(store, f"{name}.wk", d_model, d_model, rng, "routing", bias=False)
        self.wv = Linear(store, f"{name}.wv", d_model, d_model, rng, "routing", bias=False)
        self.wo = Linear(store, f"{name}.wo", d_model, d_model, rng, "routing", bias=False)
        self.gate_param = store.add(f"{name}.gate", np.zeros(1), "routing")

    def _heads_np(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        return np.ascontiguousarray(
            x.reshape(n, self.n_heads, self.head_dim).transpose(1, 0, 2))

    def __call__(self, hidden: Tensor, memory: Tensor,
                 positions: np.ndarray) -> Tensor:
        """Taped path; `positions` are the shared timeline indices of both
        the queries (rows of hidden) and the memory rows."""
        if memory.shape[0] == 0:
            return hidden
        q = T.rope(T.to_heads(self.wq(self.norm(hidden)), self.n_heads),
                   positions, self.rope_base)
        k = T.rope(T.to_heads(self.wk(memory), self.n_heads),
                   np.arange(memory.shape[0]), self.rope_base)
        v = T.to_heads(self.wv(memory), self.n_heads)
        out = self.wo(T.from_heads(T.mha_causal(q, k, v, positions)))
        return T.add(hidden, T.scale_by(out, T.tanh(self.gate_param)))

    def step(self, hidden: np.ndarray, mem_kv, position: int) -> np.ndarray:
        """Incremental path over a cached, already-projected memory."""
        kc, vc = mem_kv.view()
        if kc.shape[1] == 0:
            return hidden
        q = self._heads_np(self.wq.apply_np(self.norm.apply_np(hidden)))
        q = kernels.rope_apply(q, np.array([float(position)]), self.rope_base, 1.0)
        scores = np.ascontiguousarray(
            q @ kc.transpose(0, 2, 1) / math.sqrt(self.head_dim))
        probs = kernels.softmax_causal(scores, np.array([position], dtype=np.int64))
        merged = (probs @ vc).transpose(1, 0, 2).reshape(1, self.d)
        out = self.wo.apply_np(merged)
        return hidden + math.tanh(float(self.gate_param.data[0])) * out

    def project_memory_step(self, u_row: np.ndarray, position: int):
        """Project one new memory row to rotated K and V head layouts."""
        k = self._heads_np(self.wk.apply_np(u_row[None, :]))
        k = kernels.rope_apply(k, np.array([float(position)]), self.rope_base, 1.0)
        v = self._heads_np(self.wv.apply_np(u_row[None, :]))
        return k, v
