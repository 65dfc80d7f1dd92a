"""Parameter store and transformer building blocks.

Blocks expose two paths: a taped path over full sequences (training,
offline oracles) and a numpy `step` path over per-layer KV caches (streaming
inference). Their agreement is pinned by the cache-consistency tests.
"""

from __future__ import annotations

import math

import numpy as np

from duplexlab.nn import tensor as T
from duplexlab.nn.tensor import Tensor


class ParamStore:
    """Flat registry of named parameters with freeze groups."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.groups: dict[str, str] = {}

    def add(self, name: str, data: np.ndarray, group: str) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        p = T.param(data)
        self.params[name] = p
        self.groups[name] = group
        return p

    def set_trainable(self, trainable_groups: set[str]):
        for name, p in self.params.items():
            p.requires_grad = self.groups[name] in trainable_groups

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    def trainable(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if p.requires_grad}

    def group_bytes(self, group: str) -> bytes:
        chunks = []
        for name in sorted(self.params):
            if self.groups[name] == group:
                chunks.append(np.ascontiguousarray(self.params[name].data).tobytes())
        return b"".join(chunks)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, group: str, bias: bool = True,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out))
        self.w = store.add(f"{name}.w", w, group)
        self.b = store.add(f"{name}.b", np.zeros(d_out), group) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        y = x @ self.w.data
        if self.b is not None:
            y = y + self.b.data
        return y


class LoraLinear:
    """Frozen base weight plus a trainable low-rank adapter.

    y = x @ W + (alpha/rank) * x @ A @ B, with B zero-initialized so the
    adapter path vanishes at init.
    """

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rank: int, alpha: float, rng: np.random.Generator,
                 base_group: str, adapter_group: str):
        if rank < 1:
            raise ValueError("lora rank must be >= 1")
        w = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out))
        self.w = store.add(f"{name}.w", w, base_group)
        a = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, rank))
        self.a = store.add(f"{name}.lora_a", a, adapter_group)
        self.b = store.add(f"{name}.lora_b", np.zeros((rank, d_out)), adapter_group)
        self.scale = alpha / rank

    def __call__(self, x: Tensor) -> Tensor:
        return T.lora_linear(x, self.w, self.a, self.b, self.scale)

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.data + (x @ self.a.data) @ self.b.data * self.scale


class RMSNorm:
    def __init__(self, store: ParamStore, name: str, d: int, group: str):
        self.g = store.add(f"{name}.scale", np.ones(d), group)

    def __call__(self, x: Tensor) -> Tensor:
        return T.rmsnorm(x, self.g)

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        from duplexlab.nn import kernels

        y, _ = kernels.rmsnorm(np.ascontiguousarray(x), self.g.data, 1e-6)
        return y


class KVCache:
    """Append-only per-layer key/value buffer with doubling capacity."""

    def __init__(self, n_heads: int, head_dim: int, cap: int = 64):
        self.k = np.empty((n_heads, cap, head_dim))
        self.v = np.empty((n_heads, cap, head_dim))
        self.t = 0

    def append(self, k_new: np.ndarray, v_new: np.ndarray):
        n = k_new.shape[1]
        if self.t + n > self.k.shape[1]:
            cap = max(2 * self.k.shape[1], self.t + n)
            for attr in ("k", "v"):
                old = getattr(self, attr)
                grown = np.empty((old.shape[0], cap, old.shape[2]))
                grown[:, :self.t] = old[:, :self.t]
                setattr(self, attr, grown)
        self.k[:, self.t:self.t + n] = k_new
        self.v[:, self.t:self.t + n] = v_new
        self.t += n

    def view(self):
        return self.k[:, :self.t], self.v[:, :self.t]


def _proj(store, name, d_in, d_out, rng, group, lora):
    if lora is None:
        return Linear(store, name, d_in, d_out, rng, group, bias=False)
    rank, alpha, base_group, adapter_group = lora
    return LoraLinear(store, name, d_in, d_out, rank, alpha, rng,
                      base_group, adapter_group)


class CausalSelfAttention:
    def __init__(self, store, name, d, n_heads, rope_base, rng, group,
                 lora=None):
        self.d = d
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.rope_base = rope_base
        self.wq = _proj(store, f"{name}.wq", d, d, rng, group, lora)
        self.wk = _proj(store, f"{name}.wk", d, d, rng, group, lora)
        self.wv = _proj(store, f"{name}.wv", d, d, rng, group, lora)
        self.wo = _proj(store, f"{name}.wo", d, d, rng, group, lora)

    def __call__(self, x: Tensor, positions: np.ndarray) -> Tensor:
        q = T.rope(T.to_heads(self.wq(x), self.n_heads), positions, self.rope_base)
        k = T.rope(T.to_heads(self.wk(x), self.n_heads), positions, self.rope_base)
        v = T.to_heads(self.wv(x), self.n_heads)
        out = T.mha_causal(q, k, v, positions)
        return self.wo(T.from_heads(out))

    def step(self, x: np.ndarray, cache: KVCache, positions: np.ndarray) -> np.ndarray:
        from duplexlab.nn import kernels

        n = x.shape[0]
        q = self._heads(self.wq.apply_np(x))
        k = self._heads(self.wk.apply_np(x))
        v = self._heads(self.wv.apply_np(x))
        q = kernels.rope_apply(q, positions.astype(np.float64), self.rope_base, 1.0)
        k = kernels.rope_apply(k, positions.astype(np.float64), self.rope_base, 1.0)
        cache.append(k, v)
        kc, vc = cache.view()
        scores = np.ascontiguousarray(
            q @ kc.transpose(0, 2, 1) / math.sqrt(self.head_dim))
        probs = kernels.softmax_causal(scores, positions.astype(np.int64))
        out = probs @ vc
        merged = out.transpose(1, 0, 2).reshape(n, self.d)
        return self.wo.apply_np(merged)

    def _heads(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        return np.ascontiguousarray(
            x.reshape(n, self.n_heads, self.head_dim).transpose(1, 0, 2))


class MLP:
    def __init__(self, store, name, d, mult, rng, group, lora=None):
        self.w1 = _proj(store, f"{name}.w1", d, d * mult, rng, group, lora)
        self.w2 = _proj(store, f"{name}.w2", d * mult, d, rng, group, lora)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(T.silu(self.w1(x)))

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        from duplexlab.nn import kernels

        return self.w2.apply_np(kernels.silu(self.w1.apply_np(x)))


class TransformerBlock:
    """Pre-norm block: x + attn(norm(x)); x + mlp(norm(x))."""

    def __init__(self, store, name, d, n_heads, mlp_mult, rope_base, rng,
                 group, lora=None):
        self.norm1 = RMSNorm(store, f"{name}.norm1", d, group)
        self.attn = CausalSelfAttention(store, f"{name}.attn", d, n_heads,
                                        rope_base, rng, group, lora)
        self.norm2 = RMSNorm(store, f"{name}.norm2", d, group)
        self.mlp = MLP(store, f"{name}.mlp", d, mlp_mult, rng, group, lora)

    def __call__(self, x: Tensor, positions: np.ndarray) -> Tensor:
        x = T.add(x, self.attn(self.norm1(x), positions))
        return T.add(x, self.mlp(self.norm2(x)))

    def step(self, x: np.ndarray, cache: KVCache, positions: np.ndarray) -> np.ndarray:
        x = x + self.attn.step(self.norm1.apply_np(x), cache, positions)
        return x + self.mlp.apply_np(self.norm2.apply_np(x))


class TransformerStack:
    def __init__(self, store, name, d, n_layers, n_heads, mlp_mult, rope_base,
                 rng, group, lora=None):
        self.d = d
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.blocks = [
            TransformerBlock(store, f"{name}.layers.{i}", d, n_heads, mlp_mult,
                             rope_base, rng, group, lora)
            for i in range(n_layers)
        ]
        self.final_norm = RMSNorm(store, f"{name}.final_norm", d, group)

    def __call__(self, x: Tensor, positions: np.ndarray) -> Tensor:
        for block in self.blocks:
            x = block(x, positions)
        return self.final_norm(x)

    def new_caches(self) -> list[KVCache]:
        return [KVCache(self.n_heads, self.head_dim) for _ in self.blocks]

    def step(self, x: np.ndarray, caches: list[KVCache],
             positions: np.ndarray) -> np.ndarray:
        for block, cache in zip(self.blocks, caches):
            x = block.step(x, cache, positions)
        return self.final_norm.apply_np(x)
