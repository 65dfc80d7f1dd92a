"""Full duplex model: encoder + routing + LoRA'd frozen backbone + audio head.

The backbone base weights are randomly initialized and permanently frozen
(they stand in for a pretrained text-only LLM, which is out of reach here);
all task capability is carried by the trainable groups: encoder, adapter,
embeddings, LoRA, routing, and the audio head.

Parameter names and shapes outside `routing.*` are identical across the CF
and XA variants, so checkpoints stay diffable group by group.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from duplexlab import vocab as V
from duplexlab.audio_head import AudioHead, AudioHeadConfig
from duplexlab.compose import DuplexExample
from duplexlab.encoder import StreamingEncoder
from duplexlab.nn import tensor as T
from duplexlab.nn.layers import Linear, ParamStore, TransformerBlock, RMSNorm
from duplexlab.nn.tensor import Tensor
from duplexlab.routing import ChannelFusion, XaAdapter, place_adapters
from duplexlab.vocab import Vocab

FROZEN_GROUP = "backbone_base"
ALL_GROUPS = ("encoder", "adapter", "embeddings", "lora", "routing",
              "audio_head", FROZEN_GROUP)


def _block_rows(rng, n, d, dims: slice) -> np.ndarray:
    width = dims.stop - dims.start
    rows = np.zeros((n, d))
    rows[:, dims] = rng.normal(0.0, 1.0 / np.sqrt(width), size=(n, width))
    return rows


def _restrict_cols(w, dims: slice):
    mask = np.zeros(w.data.shape[1])
    mask[dims] = 1.0
    w.data *= mask
    w.data[:, dims] *= np.sqrt(w.data.shape[1] / (dims.stop - dims.start))


@dataclass
class ModelConfig:
    variant: str = "cf"
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    mlp_mult: int = 4
    rope_base: float = 10000.0
    lora_rank: int = 16
    lora_alpha: float = 32.0
    xa_interval: int = 2
    enc_d: int = 32
    enc_layers: int = 2
    enc_heads: int = 2
    chunk_size: int = 8
    head: AudioHeadConfig = field(default_factory=AudioHeadConfig)
    text_vocab: int = 64
    audio_vocab: int = 32
    units: int = 16

    def with_head(self, **kw) -> "ModelConfig":
        return replace(self, head=replace(self.head, **kw))


class DuplexModel:
    def __init__(self, cfg: ModelConfig, seed: int):
        if cfg.variant not in ("cf", "xa"):
            raise ValueError(f"unknown routing variant {cfg.variant}")
        self.cfg = cfg
        self.seed = seed
        self.vocab = Vocab(cfg.text_vocab, cfg.audio_vocab, cfg.units)
        self.G = cfg.head.group_size
        self.D = cfg.head.delay
        store = ParamStore()
        self.store = store
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        # the three streams start in disjoint feature subspaces (a pretrained
        # backbone would give distinguishable stream footprints for free;
        # random init does not, and fused overlap steps then corrupt the
        # generation context). Training may densify the blocks later.
        third = d // 3
        self._user_dims = slice(0, third)
        self._text_dims = slice(third, 2 * third)
        self._audio_dims = slice(2 * third, d)

        self.encoder = StreamingEncoder(
            store, rng, units=cfg.units, d_enc=cfg.enc_d,
            n_layers=cfg.enc_layers, n_heads=cfg.enc_heads, d_model=d,
            rope_base=cfg.rope_base, chunk_size=cfg.chunk_size)
        _restrict_cols(self.encoder.lin3.w, self._user_dims)
        self.user_embed = store.add(
            "adapter.user_embed.weight",
            _block_rows(rng, V.USER_EMBED_SIZE, d, self._user_dims),
            "adapter")
        self.text_embed = store.add(
            "embeddings.text_embed.weight",
            _block_rows(rng, self.vocab.text_stream_size, d, self._text_dims),
            "embeddings")
        self.text_head = Linear(store, "embeddings.text_head", d,
                                self.vocab.text_stream_size, rng, "embeddings")

        lora = (cfg.lora_rank, cfg.lora_alpha, FROZEN_GROUP, "lora")
        self.blocks = [
            TransformerBlock(store, f"backbone.layers.{i}", d, cfg.n_heads,
                             cfg.mlp_mult, cfg.rope_base, rng,
                             FROZEN_GROUP, lora=lora)
            for i in range(cfg.n_layers)
        ]
        self.final_norm = RMSNorm(store, "backbone.final_norm", d, FROZEN_GROUP)

        self.fusion: ChannelFusion | None = None
        self.adapters: dict[int, XaAdapter] = {}
        if cfg.variant == "cf":
            self.fusion = ChannelFusion(store, rng, d)
        else:
            for layer in place_adapters(cfg.n_layers, cfg.xa_interval):
                self.adapters[layer] = XaAdapter(store, rng, layer, d,
                                                 cfg.n_heads, cfg.rope_base)

        self.audio_head = AudioHead(store, rng, cfg.head, self.vocab, d,
                                    cfg.rope_base)
        _restrict_cols(self.audio_head.fb_proj.w, self._audio_dims)
        mask = np.zeros(d)
        mask[self._audio_dims] = 1.0
        self.audio_head.fb_init.data *= mask

    # --- stream assembly ----------------------------------------------------

    def user_stream(self, entries) -> Tensor:
        """Embed user entries; speech pairs run through encoder + adapter."""
        frames = []
        for e in entries:
            if e[0] == "speech":
                frames.extend(e[1])
        enc = self.encoder.encode_full(frames) if frames else None
        segments: list[Tensor] = []
        ids: list[int] = []
        speech_idx = 0
        span = 0

        def flush_ids():
            nonlocal ids
            if ids:
                segments.append(T.embedding(self.user_embed, ids))
                ids = []

        def flush_span():
            nonlocal span, speech_idx
            if span:
                segments.append(T.slice_rows(enc, speech_idx, speech_idx + span))
                speech_idx += span
                span = 0

        for e in entries:
            if e[0] == "speech":
                flush_ids()
                span += 1
            else:
                flush_span()
                ids.append(V.USER_WAIT if e[0] == "wait" else e[1])
        flush_ids()
        flush_span()
        return T.concat_rows(segments) if len(segments) > 1 else segments[0]

    def backbone(self, x: Tensor, positions: np.ndarray,
                 memory: Tensor | None = None) -> Tensor:
        for i, block in enumerate(self.blocks, start=1):
            adapter = self.adapters.get(i)
            if adapter is not None and memory is not None:
                x = adapter(x, memory, positions)
            x = block(x, positions)
        return self.final_norm(x)

    def forward_streams(self, ex: DuplexExample):
        """Teacher-forced full forward: (text_logits, audio_logits|None)."""
        voc = self.vocab
        t_steps = ex.steps
        positions = np.arange(t_steps)
        u = self.user_stream(ex.user)
        text_in = np.empty(t_steps, dtype=np.int64)
        text_in[0] = voc.text_bos
        text_in[1:] = ex.text[:-1]
        m_text = T.embedding(self.text_embed, text_in)
        if ex.audio is not None:
            m_audio = self.audio_head.group_embeddings_shifted(ex.audio)
        else:
            m_audio = self.audio_head.wait_feedback_rows(t_steps)

        if self.cfg.variant == "cf":
            x = self.fusion.fuse(u, m_text, m_audio)
            hidden = self.backbone(x, positions)
        else:
            x = T.add(m_text, m_audio)
            hidden = self.backbone(x, positions, memory=u)

        text_logits = self.text_head(hidden)
        audio_logits = None
        if ex.audio is not None:
            audio_logits = self.audio_head.logits_teacher(
                ex.audio.reshape(-1), hidden)
        return text_logits, audio_logits

    def example_loss(self, ex: DuplexExample) -> tuple[Tensor, dict]:
        """Weighted CE sums and counts; batching divides by position counts."""
        text_logits, audio_logits = self.forward_streams(ex)
        text_sum = T.cross_entropy_sum(text_logits, ex.text, ex.text_w)
        parts = {"text_sum": text_sum, "text_n": ex.steps,
                 "audio_sum": None, "audio_n": 0}
        if audio_logits is not None:
            parts["audio_sum"] = T.cross_entropy_sum(
                audio_logits, ex.audio.reshape(-1), ex.audio_w.reshape(-1))
            parts["audio_n"] = ex.audio.size
        return text_sum, parts
