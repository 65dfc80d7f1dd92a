"""Autoregressive audio head: G tokens per backbone step, delay D.

The head is a small causal decoder over the flat audio-token sequence. The
input at global audio position j is the embedding of the previous audio token
plus a projection of the backbone hidden state for step j // G, so decoding
group t conditions on the step-t hidden state and on all previously emitted
audio tokens (the head keeps its own KV cache across groups).

Feedback into the backbone: a generated group is embedded (mean of its token
embeddings by default, concatenation optionally) and projected to d_model;
that vector becomes the next step's model-audio stream entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from duplexlab.nn import tensor as T
from duplexlab.nn.layers import KVCache, Linear, ParamStore, TransformerStack
from duplexlab.nn.tensor import Tensor
from duplexlab.vocab import Vocab


@dataclass
class AudioHeadConfig:
    group_size: int = 4
    delay: int = 2
    d_head: int = 48
    n_layers: int = 2
    n_heads: int = 3
    mlp_mult: int = 4
    embed_mode: str = "mean"  # or "concat"

    def __post_init__(self):
        if self.group_size < 1 or self.delay < 0:
            raise ValueError("need group_size >= 1 and delay >= 0")
        if self.embed_mode not in ("mean", "concat"):
            raise ValueError(f"unknown embed mode {self.embed_mode}")


class AudioHead:
    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 cfg: AudioHeadConfig, vocab: Vocab, d_model: int,
                 rope_base: float = 10000.0):
        self.cfg = cfg
        self.vocab = vocab
        self.G = cfg.group_size
        va = vocab.audio_stream_size
        d = cfg.d_head
        self.embed = store.add(
            "audio_head.embed.weight",
            rng.normal(0.0, 1.0 / np.sqrt(d), size=(va, d)), "audio_head")
        self.cond = Linear(store, "audio_head.cond", d_model, d, rng, "audio_head")
        self.stack = TransformerStack(store, "audio_head", d, cfg.n_layers,
                                      cfg.n_heads, cfg.mlp_mult, rope_base,
                                      rng, "audio_head")
        self.out = Linear(store, "audio_head.out", d, va, rng, "audio_head")
        fb_in = d if cfg.embed_mode == "mean" else d * self.G
        self.fb_proj = Linear(store, "audio_head.feedback", fb_in, d_model,
                              rng, "audio_head")
        self.fb_init = store.add(
            "audio_head.feedback_init",
            rng.normal(0.0, 1.0 / np.sqrt(d_model), size=(1, d_model)),
            "audio_head")

    # --- teacher-forced path ----------------------------------------------

    def logits_teacher(self, audio_flat: np.ndarray, hidden: Tensor) -> Tensor:
        """Logits over the flat audio stream (length G*T).

        audio_flat are the target tokens; inputs are right-shifted with an
        initial BOS. hidden is (T, d_model) backbone output.
        """
        n = len(audio_flat)
        inputs = np.empty(n, dtype=np.int64)
        inputs[0] = self.vocab.audio_bos
        inputs[1:] = audio_flat[:-1]
        x = T.embedding(self.embed, inputs)
        cond = T.repeat_rows(self.cond(hidden), self.G)
        h = self.stack(T.add(x, cond), np.arange(n))
        return self.out(h)

    def group_embeddings_shifted(self, audio: np.ndarray) -> Tensor:
        """Model-audio stream rows: row t embeds the group emitted at t-1.

        audio is (T, G) target group ids; row 0 is the learned initial vector.
        """
        t_steps = audio.shape[0]
        flat = T.embedding(self.embed, audio.reshape(-1))
        if self.cfg.embed_mode == "mean":
            per_group = T.mean_row_groups(flat, self.G)
        else:
            per_group = T.reshape(flat, (t_steps, self.G * self.cfg.d_head))
        projected = self.fb_proj(per_group)
        return T.concat_rows([self.fb_init, T.slice_rows(projected, 0, t_steps - 1)])

    def wait_feedback_rows(self, t_steps: int) -> Tensor:
        """Feedback stream when no audio stream exists: init then wait groups."""
        wait = np.full(self.G, self.vocab.audio_wait, dtype=np.int64)
        row = self.fb_proj(self._group_embed_tensor(wait))
        if t_steps == 1:
            return self.fb_init
        reps = T.concat_rows([row] * (t_steps - 1))
        return T.concat_rows([self.fb_init, reps])

    def _group_embed_tensor(self, group: np.ndarray) -> Tensor:
        emb = T.embedding(self.embed, group)
        if self.cfg.embed_mode == "mean":
            return T.mean_row_groups(emb, self.G)
        return T.reshape(emb, (1, self.G * self.cfg.d_head))

    # --- incremental path ----------------------------------------------------

    def new_cache(self) -> list[KVCache]:
        return self.stack.new_caches()

    def embed_group_np(self, group) -> np.ndarray:
        """(d_model,) feedback vector for one emitted group."""
        emb = self.embed.data[np.asarray(group, dtype=np.int64)]
        if self.cfg.embed_mode == "mean":
            flatrow = emb.mean(axis=0, keepdims=True)
        else:
            flatrow = emb.reshape(1, -1)
        return self.fb_proj.apply_np(flatrow)[0]

    def init_feedback_np(self) -> np.ndarray:
        return self.fb_init.data[0]

    def decode_group(self, caches: list[KVCache], hidden_np: np.ndarray,
                     step: int, prev_token: int,
                     force_tokens=None, suppress: set[int] | None = None) -> list[int]:
        """Greedy-decode the G tokens of group `step` (or teacher-force them)."""
        cond = self.cond.apply_np(hidden_np[None, :])
        predictions = []
        prev = prev_token
        for g in range(self.G):
            pos = np.array([step * self.G + g])
            x = self.embed.data[prev][None, :] + cond
            h = self.stack.step(x, caches, pos)
            logits = self.out.apply_np(h)[0]
            if suppress:
                logits = logits.copy()
                for tok in suppress:
                    logits[tok] = -np.inf
            tok = int(np.argmax(logits))
            predictions.append(tok)
            # cache consumes the forced token when teacher-forcing
            prev = tok if force_tokens is None else int(force_tokens[g])
        return predictions
