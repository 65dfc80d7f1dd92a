"""Chunked causal encoder over acoustic units plus the 2x-downsampling adapter.

Acoustic frames are discrete unit ids embedded by lookup (no convolutional
front-end; the left-padding causality concern is therefore moot and causality
rests entirely on the attention masks). The adapter is three linear layers
with the middle one acting on feature-concatenated frame pairs, halving the
time resolution so one adapter output row is one backbone timeline step.

Streaming and offline paths share all parameters; `encode_chunk` over any
chunking must match `encode_full` within 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from duplexlab.nn import kernels
from duplexlab.nn import tensor as T
from duplexlab.nn.layers import KVCache, Linear, ParamStore, TransformerStack
from duplexlab.nn.tensor import Tensor

DEFAULT_CHUNK_SIZE = 8


@dataclass
class EncoderState:
    caches: list[KVCache]
    frames_consumed: int = 0
    pending_frame: np.ndarray | None = None  # top-layer output awaiting a pair partner


class StreamingEncoder:
    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 units: int, d_enc: int = 32, n_layers: int = 2,
                 n_heads: int = 2, mlp_mult: int = 4, d_model: int = 64,
                 rope_base: float = 10000.0, chunk_size: int = DEFAULT_CHUNK_SIZE):
        self.d_enc = d_enc
        self.d_model = d_model
        self.chunk_size = chunk_size
        self.embed = store.add(
            "encoder.embed.weight",
            rng.normal(0.0, 1.0 / np.sqrt(d_enc), size=(units, d_enc)),
            "encoder")
        self.stack = TransformerStack(store, "encoder", d_enc, n_layers,
                                      n_heads, mlp_mult, rope_base, rng,
                                      "encoder")
        self.lin1 = Linear(store, "adapter.lin1", d_enc, d_enc, rng, "adapter")
        self.lin2 = Linear(store, "adapter.lin2", 2 * d_enc, 2 * d_enc, rng, "adapter")
        self.lin3 = Linear(store, "adapter.lin3", 2 * d_enc, d_model, rng, "adapter")

    # --- offline (taped) path ---------------------------------------------

    def encode_full(self, frames) -> Tensor:
        """All frames at once -> (floor(F/2), d_model). Empty input -> (0, d_model)."""
        frames = np.asarray(frames, dtype=np.int64)
        n_pairs = len(frames) // 2
        if n_pairs == 0:
            return Tensor(np.zeros((0, self.d_model)))
        x = T.embedding(self.embed, frames)
        h = self.stack(x, np.arange(len(frames)))
        h = T.silu(self.lin1(h))
        pairs = T.reshape(T.slice_rows(h, 0, 2 * n_pairs), (n_pairs, 2 * self.d_enc))
        return self.lin3(T.silu(self.lin2(pairs)))

    # --- streaming path -----------------------------------------------------

    def new_state(self) -> EncoderState:
        return EncoderState(caches=self.stack.new_caches())

    def encode_chunk(self, state: EncoderState, frames) -> list[np.ndarray]:
        """Feed one chunk; returns the newly available user-stream steps.

        Any nonempty chunk length is accepted (the configured chunk size is a
        data-pipeline convention; the last chunk may be shorter). An empty
        chunk is a no-op.
        """
        frames = np.asarray(frames, dtype=np.int64)
        if frames.size == 0:
            return []
        x = self.embed.data[frames]
        positions = np.arange(state.frames_consumed,
                              state.frames_consumed + len(frames))
        top = self.stack.step(x, state.caches, positions)
        state.frames_consumed += len(frames)
        rows = ([state.pending_frame] if state.pending_frame is not None else [])
        rows.extend(top)
        steps = []
        i = 0
        while i + 1 < len(rows):
            steps.append(self._adapt_pair(rows[i], rows[i + 1]))
            i += 2
        state.pending_frame = rows[i].copy() if i < len(rows) else None
        return steps

    def _adapt_pair(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        pair = np.concatenate([
            kernels.silu(self.lin1.apply_np(a[None, :])),
            kernels.silu(self.lin1.apply_np(b[None, :])),
        ], axis=1)
        return self.lin3.apply_np(kernels.silu(self.lin2.apply_np(pair)))[0]

    def encode_chunked(self, frames, chunk_size: int | None = None) -> np.ndarray:
        """Offline helper: stream `frames` through fixed-size chunks."""
        size = chunk_size or self.chunk_size
        state = self.new_state()
        out = []
        frames = list(frames)
        for i in range(0, len(frames), size):
            out.extend(self.encode_chunk(state, frames[i:i + size]))
        return np.array(out).reshape(len(out), self.d_model)
