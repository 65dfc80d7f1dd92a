"""Command-line interface.

    duplexlab gen-corpus --seed 7 --out corpus.dlxc
    duplexlab train --stage 1 --variant cf --seed 1 --out runs/cf
    duplexlab eval --suite interruption --ckpt runs/cf/stage3.dlxw --n 40 \
        --seed 9 --out report.json
    duplexlab serve --ckpt-dir runs/cf --bind 127.0.0.1:7676
    duplexlab replay --log session.jsonl --ckpt-dir runs/cf
    duplexlab experiment --name cf-noint --out runs/ablate
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from duplexlab.audio_head import AudioHeadConfig
from duplexlab.compose import Composer, ComposerConfig
from duplexlab.config import Config
from duplexlab.model import DuplexModel, ModelConfig
from duplexlab.nn import checkpoint
from duplexlab import evalharness, trainer
from duplexlab.world import SyntheticSpec, World, generate_corpus, load_corpus, save_corpus


def _composer_cfg(cfg: Config, delay: int) -> ComposerConfig:
    return ComposerConfig(
        overlap_support=cfg.get_list("composer.overlap_support", (2, 3, 4, 5, 6), int),
        overlap_probs=cfg.get_list("composer.overlap_probs",
                                   (0.6, 0.3, 0.06, 0.03, 0.01), float),
        int_supervision=cfg.get_bool("composer.int_supervision", True),
        w_wait=cfg.get_float("composer.w_wait", 0.001),
        w_int=cfg.get_float("composer.w_int", 50.0),
        delay=delay,
    )


def _model_cfg(cfg: Config, variant: str) -> ModelConfig:
    head = AudioHeadConfig(
        group_size=cfg.get_int("audio_head.G", 4),
        delay=cfg.get_int("audio_head.D", 2),
        embed_mode=cfg.get("audio_head.embed", "mean"),
    )
    return ModelConfig(
        variant=variant,
        xa_interval=cfg.get_int("routing.xa_interval", 2),
        chunk_size=cfg.get_int("encoder.chunk_size", 8),
        head=head,
    )


def write_meta(ckpt_path: str, model: DuplexModel, world_seed: int, stage: int):
    meta = {
        "variant": model.cfg.variant,
        "model_seed": model.seed,
        "world_seed": world_seed,
        "xa_interval": model.cfg.xa_interval,
        "stage": stage,
        "G": model.G,
        "D": model.D,
    }
    with open(ckpt_path[:-5] + ".meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)


def load_model_for(ckpt_path: str) -> tuple[DuplexModel, World, str]:
    meta_path = ckpt_path[:-5] + ".meta.json"
    with open(meta_path) as fh:
        meta = json.load(fh)
    cfg = ModelConfig(variant=meta["variant"], xa_interval=meta["xa_interval"])
    if meta.get("G", 4) != 4:
        cfg = cfg.with_head(group_size=meta["G"])
    model = DuplexModel(cfg, seed=meta["model_seed"])
    checkpoint.load_into(model.store, ckpt_path)
    world = World(SyntheticSpec(seed=meta["world_seed"]))
    return model, world, checkpoint.file_hash(ckpt_path)


def cmd_gen_corpus(args):
    world = World(SyntheticSpec(seed=args.seed))
    rng = np.random.default_rng([args.seed, 5])
    corpus = generate_corpus(world, rng, n_asr=args.n_asr, n_tts=args.n_tts,
                             n_qa=args.n_qa, n_duplex=args.n_duplex)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.records)} records to {args.out}")


def cmd_train(args):
    cfg = Config.load(args.config) if args.config else Config()
    world_seed = cfg.get_int("world.seed", args.seed)
    world = World(SyntheticSpec(seed=world_seed))
    if args.corpus:
        corpus = load_corpus(args.corpus)
    else:
        corpus = generate_corpus(world, np.random.default_rng([world_seed, 5]))
    model = DuplexModel(_model_cfg(cfg, args.variant), seed=args.seed)
    if args.stage > 1:
        if not args.ckpt:
            sys.exit("stage > 1 requires --ckpt with the previous stage")
        checkpoint.load_into(model.store, args.ckpt)
    stage_cfg = trainer.stage_defaults(
        args.stage, steps=cfg.get_int("trainer.steps", 0) or args.steps)
    stage_cfg.batch_size = cfg.get_int("trainer.batch", stage_cfg.batch_size)
    ckpt_path = trainer.train_stage(
        model, corpus, stage_cfg, seed=args.seed, out_dir=args.out,
        composer_cfg=_composer_cfg(cfg, model.D))
    write_meta(ckpt_path, model, world_seed, args.stage)
    print(f"stage {args.stage} checkpoint: {ckpt_path}")


def cmd_eval(args):
    model, world, ckpt_hash = load_model_for(args.ckpt)
    if args.suite in ("interruption", "backchannel", "smooth"):
        report = evalharness.run_suite(model, world, args.suite, args.n, args.seed)
    elif args.suite in ("asr", "tts", "qa"):
        if args.suite == "qa":
            report = {"suite": "qa",
                      "s2td": evalharness.task_accuracy(model, world, "s2td",
                                                        args.n, args.seed),
                      "s2tsd": evalharness.task_accuracy(model, world, "s2tsd",
                                                         args.n, args.seed)}
        else:
            report = evalharness.task_accuracy(model, world, args.suite,
                                               args.n, args.seed)
    elif args.suite == "coherence":
        report = evalharness.coherence_probe(model, world, args.n, args.seed)
    else:
        sys.exit(f"unknown suite {args.suite}")
    evalharness.write_report(report, args.out, checkpoint_hash=ckpt_hash)
    print(f"report: {args.out}")


def cmd_serve(args):
    from duplexlab import server as srv

    registry = srv.Registry.from_dir(args.ckpt_dir)
    print(f"serving {sorted(registry.entries)} on {args.bind}")
    srv.serve(args.bind, registry)


def cmd_replay(args):
    from duplexlab import server as srv

    registry = srv.Registry.from_dir(args.ckpt_dir)
    for line in srv.replay_log(args.log, registry):
        print(line)


def cmd_experiment(args):
    exp = trainer.experiment_config(args.name)
    model = trainer.build_model(exp, seed=args.seed)
    world = World(SyntheticSpec(seed=args.world_seed))
    corpus = generate_corpus(world, np.random.default_rng([args.world_seed, 5]))
    os.makedirs(args.out, exist_ok=True)
    ckpt = None
    for stage in (1, 2, 3):
        stage_cfg = trainer.stage_defaults(stage, steps=exp.stage_steps[stage - 1])
        ckpt = trainer.train_stage(
            model, corpus, stage_cfg, seed=args.seed,
            out_dir=os.path.join(args.out, args.name),
            composer_cfg=replace(exp.composer, delay=model.D))
    write_meta(ckpt, model, args.world_seed, 3)
    report = {
        "experiment": args.name,
        "interruption": evalharness.run_suite(model, world, "interruption",
                                              args.n, args.seed,
                                              composer_cfg=replace(
                                                  exp.composer, delay=model.D)),
        "asr": evalharness.task_accuracy(model, world, "asr", args.n, args.seed),
    }
    out_path = os.path.join(args.out, f"{args.name}.report.json")
    evalharness.write_report(report, out_path)
    print(f"experiment report: {out_path}")


def cmd_render(args):
    corpus = load_corpus(args.corpus)
    world = World(corpus.spec)
    composer = Composer(world)
    kind, payload = corpus.records[args.index]
    rng = np.random.default_rng(args.seed)
    from duplexlab.compose import render_example

    print(render_example(composer.compose(kind, payload, rng), world))


def main(argv=None):
    ap = argparse.ArgumentParser(prog="duplexlab")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-corpus", help="generate and save a synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-asr", type=int, default=1500)
    p.add_argument("--n-tts", type=int, default=1500)
    p.add_argument("--n-qa", type=int, default=800)
    p.add_argument("--n-duplex", type=int, default=1200)
    p.set_defaults(fn=cmd_gen_corpus)

    p = sub.add_parser("train", help="run one curriculum stage")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--variant", choices=("cf", "xa"), required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", help="previous-stage checkpoint (stages 2-3)")
    p.add_argument("--corpus")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation suite")
    p.add_argument("--suite", required=True,
                   choices=("interruption", "backchannel", "smooth", "asr",
                            "tts", "qa", "coherence"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="serve live duplex sessions")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--bind", default="127.0.0.1:7676")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("replay", help="replay a session message log")
    p.add_argument("--log", required=True)
    p.add_argument("--ckpt-dir", required=True)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("experiment", help="train + evaluate a named config")
    p.add_argument("--name", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--world-seed", type=int, default=7)
    p.add_argument("--n", type=int, default=40)
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("render", help="pretty-print one composed example")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_render)

    args = ap.parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
