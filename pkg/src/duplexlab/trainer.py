"""Three-stage curriculum trainer.

Stage 1 trains encoder, adapter, embeddings, routing, audio head, and LoRA on
ASR + streaming TTS. Stages 2-3 freeze the encoder (the backbone base is
frozen always, in every stage) and add turn-based dialogue, then full-duplex
episodes. Freezing is byte-provable: a stage run leaves frozen groups
bit-identical in the written checkpoints.

Batch composition is driven by a data RNG derived only from (seed, stage), so
CF and XA runs with equal seeds consume identical batches; per-step batch
hashes are logged to make that checkable.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from duplexlab.compose import Composer, ComposerConfig, DuplexExample, PlanRejected
from duplexlab.model import ALL_GROUPS, FROZEN_GROUP, DuplexModel, ModelConfig
from duplexlab.nn import checkpoint
from duplexlab.nn import tensor as T
from duplexlab.world import Corpus, World


@dataclass
class OptimizerConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 100
    total_steps: int = 600


def lr_at(cfg: OptimizerConfig, step: int) -> float:
    """Linear warm-up then cosine decay to zero."""
    if step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(1, cfg.total_steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled weight decay Adam over a ParamStore's trainable set."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, lr: float, lr_scale: dict | None = None):
        cfg = self.cfg
        self.t += 1
        b1c = 1.0 - cfg.beta1 ** self.t
        b2c = 1.0 - cfg.beta2 ** self.t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m += (1.0 - cfg.beta1) * (g - m)
            v += (1.0 - cfg.beta2) * (g * g - v)
            update = (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)
            p_lr = lr if not lr_scale else lr * lr_scale.get(name, 1.0)
            p.data -= p_lr * (update + cfg.weight_decay * p.data)


@dataclass
class StageConfig:
    stage: int
    steps: int
    lr: float
    batch_size: int = 16
    warmup_steps: int = 100
    grad_clip: float | None = None  # global gradient-norm ceiling
    mixture: dict = field(default_factory=dict)  # record kind -> weight
    # per-group learning-rate multipliers (groups absent here get 1.0)
    group_lr_scale: dict = field(default_factory=dict)

    @property
    def trainable_groups(self) -> set[str]:
        groups = set(ALL_GROUPS) - {FROZEN_GROUP}
        if self.stage >= 2:
            groups -= {"encoder"}
        if self.stage >= 3:
            # the acoustic adapter is settled after stage 2; keeping it fixed
            # stops the duplex stage from dragging user-stream features out
            # from under the low-weight waiting behaviors
            groups -= {"adapter"}
        return groups


def stage_defaults(stage: int, steps: int | None = None) -> StageConfig:
    if stage == 1:
        return StageConfig(1, steps or 600, lr=3e-3,
                           mixture={"asr": 1, "tts": 1})
    if stage == 2:
        return StageConfig(2, steps or 600, lr=1e-3,
                           mixture={"asr": 1, "tts": 1, "s2td": 1, "s2tsd": 1})
    if stage == 3:
        # turn-based dialogue stays in the mix: the duplex stage otherwise
        # forgets QA outright at this scale
        return StageConfig(3, steps or 600, lr=1e-3,
                           mixture={"asr": 1, "tts": 1, "s2td": 1,
                                    "s2tsd": 1, "duplex": 3})
    raise ValueError(f"unknown stage {stage}")


def clip_grad_norm(params: dict, max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


def batch_hash(examples: list[DuplexExample]) -> str:
    h = hashlib.sha1()
    for ex in examples:
        h.update(ex.kind.encode())
        h.update(repr(ex.user).encode())
        h.update(ex.text.tobytes())
        if ex.audio is not None:
            h.update(ex.audio.tobytes())
    return h.hexdigest()[:16]


class BatchSampler:
    """Seed-deterministic mixture sampler over corpus records."""

    def __init__(self, corpus: Corpus, composer: Composer, stage_cfg: StageConfig,
                 seed: int):
        self.composer = composer
        self.stage_cfg = stage_cfg
        self.rng = np.random.default_rng([seed, stage_cfg.stage, 1013])
        self.pools = {k: corpus.by_kind(k) for k in stage_cfg.mixture}
        for kind, pool in self.pools.items():
            if not pool:
                raise ValueError(f"corpus has no '{kind}' records")
        kinds = sorted(stage_cfg.mixture)
        weights = np.array([stage_cfg.mixture[k] for k in kinds], dtype=float)
        self.kinds = kinds
        self.probs = weights / weights.sum()

    def next_batch(self) -> list[DuplexExample]:
        out = []
        while len(out) < self.stage_cfg.batch_size:
            kind = self.kinds[int(self.rng.choice(len(self.kinds), p=self.probs))]
            pool = self.pools[kind]
            payload = pool[int(self.rng.integers(len(pool)))]
            try:
                out.append(self.composer.compose(kind, payload, self.rng))
            except PlanRejected:
                continue  # unsatisfiable onset constraints: resample
        return out


def batch_loss(model: DuplexModel, batch: list[DuplexExample]) -> T.Tensor:
    """Mean over supervised positions of weight*CE, text and audio summed."""
    text_sums, audio_sums = [], []
    n_text = n_audio = 0
    for ex in batch:
        _, parts = model.example_loss(ex)
        text_sums.append(parts["text_sum"])
        n_text += parts["text_n"]
        if parts["audio_sum"] is not None:
            audio_sums.append(parts["audio_sum"])
            n_audio += parts["audio_n"]
    loss = T.scale(_tsum(text_sums), 1.0 / n_text)
    if audio_sums:
        loss = T.add(loss, T.scale(_tsum(audio_sums), 1.0 / n_audio))
    return loss


def _tsum(terms):
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total


def train_stage(model: DuplexModel, corpus: Corpus, stage_cfg: StageConfig,
                seed: int, out_dir: str,
                composer_cfg: ComposerConfig | None = None,
                log_every: int = 1) -> str:
    """Run one curriculum stage; returns the checkpoint path."""
    os.makedirs(out_dir, exist_ok=True)
    world = World(corpus.spec)
    composer = Composer(world, composer_cfg or ComposerConfig(delay=model.D))
    model.store.set_trainable(stage_cfg.trainable_groups)
    opt_cfg = OptimizerConfig(lr=stage_cfg.lr, warmup_steps=stage_cfg.warmup_steps,
                              total_steps=stage_cfg.steps)
    opt = AdamW(opt_cfg)
    sampler = BatchSampler(corpus, composer, stage_cfg, seed)
    lr_scale = None
    if stage_cfg.group_lr_scale:
        lr_scale = {name: stage_cfg.group_lr_scale.get(group, 1.0)
                    for name, group in model.store.groups.items()}
    log_path = os.path.join(out_dir, f"stage{stage_cfg.stage}_train_log.csv")
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "batch_hash"])
        for step in range(stage_cfg.steps):
            batch = sampler.next_batch()
            model.store.zero_grads()
            loss = batch_loss(model, batch)
            T.backward(loss)
            if stage_cfg.grad_clip is not None:
                clip_grad_norm(model.store.trainable(), stage_cfg.grad_clip)
            lr = lr_at(opt_cfg, step)
            opt.step(model.store.trainable(), lr, lr_scale)
            if step % log_every == 0:
                writer.writerow([step, f"{loss.item():.6f}", f"{lr:.6g}",
                                 batch_hash(batch)])
    ckpt_path = os.path.join(out_dir, f"stage{stage_cfg.stage}.dlxw")
    checkpoint.save(model.store.params, ckpt_path)
    return ckpt_path


def load_stage(model: DuplexModel, ckpt_path: str):
    checkpoint.load_into(model.store, ckpt_path)


# ---------------------------------------------------------------------------
# named experiment configurations (ablations and sweeps)

@dataclass
class ExperimentConfig:
    name: str
    variant: str = "cf"
    composer: ComposerConfig = field(default_factory=ComposerConfig)
    model_overrides: dict = field(default_factory=dict)
    stage_steps: tuple[int, int, int] = (600, 600, 600)


def experiment_config(name: str) -> ExperimentConfig:
    base = ComposerConfig()
    table = {
        "cf-base": ExperimentConfig("cf-base", "cf", base),
        "xa-base": ExperimentConfig("xa-base", "xa", base),
        "cf-noint": ExperimentConfig(
            "cf-noint", "cf", replace(base, int_supervision=False)),
        "cf-fixed2": ExperimentConfig(
            "cf-fixed2", "cf",
            replace(base, overlap_support=(2,), overlap_probs=(1.0,))),
        "cf-fixed3": ExperimentConfig(
            "cf-fixed3", "cf",
            replace(base, overlap_support=(3,), overlap_probs=(1.0,))),
        "g4-vs-g5": ExperimentConfig(
            "g4-vs-g5", "cf", base, model_overrides={"group_size": 5}),
        "xa-interval-1": ExperimentConfig(
            "xa-interval-1", "xa", base, model_overrides={"xa_interval": 1}),
        "xa-interval-2": ExperimentConfig(
            "xa-interval-2", "xa", base, model_overrides={"xa_interval": 2}),
        "xa-interval-4": ExperimentConfig(
            "xa-interval-4", "xa", base, model_overrides={"xa_interval": 4}),
    }
    if name not in table:
        raise KeyError(f"unknown experiment config {name!r}")
    return table[name]


def build_model(exp: ExperimentConfig, seed: int,
                base_cfg: ModelConfig | None = None) -> DuplexModel:
    cfg = base_cfg or ModelConfig()
    cfg = replace(cfg, variant=exp.variant)
    over = dict(exp.model_overrides)
    if "xa_interval" in over:
        cfg = replace(cfg, xa_interval=over.pop("xa_interval"))
    if "group_size" in over:
        cfg = cfg.with_head(group_size=over.pop("group_size"))
    if over:
        raise ValueError(f"unhandled overrides {over}")
    return DuplexModel(cfg, seed)
