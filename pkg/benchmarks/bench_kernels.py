"""Benchmark the compiled kernel extension against the numpy fallback.

Run after building the extension:

    python benchmarks/bench_kernels.py

Covers the four hot row-kernel families on model-realistic shapes plus one
end-to-end training-step macrobenchmark per backend (the macro runs re-exec
this script with DUPLEXLAB_KERNELS pinned, since the backend is chosen at
import time).
"""

import os
import subprocess
import sys
import time

import numpy as np


def bench(fn, *args, repeat=2000):
    fn(*args)  # warm
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def kernel_table():
    from duplexlab.nn import _kernels_np as knp

    try:
        from duplexlab.nn import _ck as ck
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return

    rng = np.random.default_rng(0)
    h, t, v, d = 4, 64, 67, 64
    scores = np.ascontiguousarray(rng.normal(size=(h, t, t)))
    qpos = np.arange(t, dtype=np.int64)
    probs = knp.softmax_causal(scores, qpos)
    dprobs = np.ascontiguousarray(rng.normal(size=probs.shape))
    x = np.ascontiguousarray(rng.normal(size=(t, d)))
    g = np.ones(d)
    _, rinv = knp.rmsnorm(x, g, 1e-6)
    dy = np.ascontiguousarray(rng.normal(size=x.shape))
    pos = np.arange(t, dtype=np.float64)
    x3 = np.ascontiguousarray(rng.normal(size=(h, t, d // h)))
    logits = np.ascontiguousarray(rng.normal(size=(t, v)))
    targets = rng.integers(0, v, size=t)
    weights = np.ones(t)

    cases = [
        ("softmax_causal", (scores, qpos)),
        ("softmax_causal_bwd", (probs, dprobs)),
        ("rmsnorm", (x, g, 1e-6)),
        ("rmsnorm_bwd", (x, g, rinv, dy)),
        ("rope_apply", (x3, pos, 10000.0, 1.0)),
        ("ce_rows", (logits, targets, weights)),
        ("silu", (x,)),
        ("silu_bwd", (x, dy)),
    ]
    print(f"{'kernel':<20} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, args in cases:
        t_np = bench(getattr(knp, name), *args)
        t_ck = bench(getattr(ck, name), *args)
        print(f"{name:<20} {t_np * 1e6:>8.1f}us {t_ck * 1e6:>8.1f}us "
              f"{t_np / t_ck:>7.2f}x")


def training_macro():
    """One seeded 12-step training run under the already-selected backend."""
    from duplexlab import trainer
    from duplexlab.model import DuplexModel, ModelConfig
    from duplexlab.nn import BACKEND
    from duplexlab.world import SyntheticSpec, World, generate_corpus

    world = World(SyntheticSpec(seed=7))
    corpus = generate_corpus(world, np.random.default_rng([7, 5]),
                             n_asr=200, n_tts=200, n_qa=200, n_duplex=200)
    model = DuplexModel(ModelConfig(variant="cf"), seed=1)
    cfg = trainer.stage_defaults(1, steps=12)
    t0 = time.perf_counter()
    trainer.train_stage(model, corpus, cfg, seed=1, out_dir="/tmp/duplexlab_bench")
    dt = (time.perf_counter() - t0) / cfg.steps
    print(f"training step ({BACKEND}): {dt * 1e3:.1f} ms")


def main():
    if len(sys.argv) > 1 and sys.argv[1] == "--macro-only":
        training_macro()
        return
    kernel_table()
    print()
    for backend in ("", "numpy"):
        env = dict(os.environ)
        if backend:
            env["DUPLEXLAB_KERNELS"] = backend
        else:
            env.pop("DUPLEXLAB_KERNELS", None)
        subprocess.run([sys.executable, __file__, "--macro-only"], env=env,
                       check=True)


if __name__ == "__main__":
    main()
