"""Builds (or reuses) the trained reference checkpoints the acceptance
criteria run against.

Four artifact chains share seeds and data: cf-base and xa-base (full
curriculum), plus two CF stage-3 ablation forks (no-INT supervision, fixed
overlap 2) reusing the cf-base stage-2 checkpoint. Chains run as parallel
subprocesses; checkpoints are cached under tests/_artifacts keyed by the
training profile, so only the first run trains.
"""

import hashlib
import json
import os
import subprocess
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ART_DIR = os.path.join(ROOT, "tests", "_artifacts")

PROFILE = {
    "world_seed": 7,
    "model_seed": 1,
    "stage_steps": [3500, 2500, 2500],
    "eval_seed": 909,
}

_TRAIN_SNIPPET = """
import json, sys
import numpy as np
from duplexlab import trainer
from duplexlab.compose import ComposerConfig
from duplexlab.model import DuplexModel, ModelConfig
from duplexlab.nn import checkpoint
from duplexlab.world import SyntheticSpec, World, generate_corpus
from duplexlab.cli import write_meta

spec = json.loads(sys.argv[1])
world = World(SyntheticSpec(seed=spec["world_seed"]))
corpus = generate_corpus(world, np.random.default_rng([spec["world_seed"], 5]))
model = DuplexModel(ModelConfig(variant=spec["variant"]), seed=spec["model_seed"])
if spec.get("init_ckpt"):
    checkpoint.load_into(model.store, spec["init_ckpt"])
comp = ComposerConfig(delay=model.D, **spec.get("composer", {}))
for stage in spec["stages"]:
    cfg = trainer.stage_defaults(stage, steps=spec["stage_steps"][stage - 1])
    path = trainer.train_stage(model, corpus, cfg, seed=spec["model_seed"],
                               out_dir=spec["out_dir"], composer_cfg=comp)
    write_meta(path, model, spec["world_seed"], stage)
print("done", spec["out_dir"])
"""


def profile_key() -> str:
    return hashlib.sha1(json.dumps(PROFILE, sort_keys=True).encode()).hexdigest()[:12]


def _run_chains(chains):
    procs = []
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1")
    for spec in chains:
        procs.append((spec["out_dir"], subprocess.Popen(
            [sys.executable, "-c", _TRAIN_SNIPPET, json.dumps(spec)],
            env=env, stdout=subprocess.PIPE, stderr=subprocess.STDOUT)))
    failures = []
    for out_dir, proc in procs:
        output, _ = proc.communicate()
        if proc.returncode != 0:
            failures.append(f"{out_dir}:\n{output.decode()[-2000:]}")
    if failures:
        raise RuntimeError("artifact training failed:\n" + "\n".join(failures))


def build_artifacts() -> dict:
    """Returns {name: stage3 checkpoint path}; trains on first call."""
    base = os.path.join(ART_DIR, profile_key())
    names = ["cf", "xa", "cf_noint", "cf_fixed2"]
    paths = {n: os.path.join(base, n, "stage3.dlxw") for n in names}
    paths["cf_stage1"] = os.path.join(base, "cf", "stage1.dlxw")
    paths["cf_stage2"] = os.path.join(base, "cf", "stage2.dlxw")
    marker = os.path.join(base, "COMPLETE")
    if os.path.exists(marker):
        return paths
    os.makedirs(base, exist_ok=True)
    steps = PROFILE["stage_steps"]
    common = {"world_seed": PROFILE["world_seed"],
              "model_seed": PROFILE["model_seed"], "stage_steps": steps}
    # full curriculum for both variants, in parallel
    _run_chains([
        dict(common, variant="cf", stages=[1, 2, 3],
             out_dir=os.path.join(base, "cf")),
        dict(common, variant="xa", stages=[1, 2, 3],
             out_dir=os.path.join(base, "xa")),
    ])
    # ablation forks reuse the cf stage-2 checkpoint
    stage2 = os.path.join(base, "cf", "stage2.dlxw")
    _run_chains([
        dict(common, variant="cf", stages=[3],
             out_dir=os.path.join(base, "cf_noint"), init_ckpt=stage2,
             composer={"int_supervision": False}),
        dict(common, variant="cf", stages=[3],
             out_dir=os.path.join(base, "cf_fixed2"), init_ckpt=stage2,
             composer={"overlap_support": [2], "overlap_probs": [1.0]}),
    ])
    with open(marker, "w") as fh:
        json.dump(PROFILE, fh)
    return paths
