"""Composer laws: layouts, delay, INT placement, weights, overlap sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duplexlab.compose import (
    Composer,
    ComposeError,
    ComposerConfig,
    PlanRejected,
    render_example,
    sample_overlap,
)
from duplexlab.world import RESPONSE_LEN, World, SyntheticSpec


def test_asr_layout(world, composer):
    tail, lead = composer.cfg.tail_steps, composer.cfg.lead_steps
    ex = composer.compose_asr([10, 11, 12])
    assert ex.steps == lead + 1 + 2 * 3 + tail
    voc = world.vocab
    start = lead + 1 + 3
    assert list(ex.text[:start]) == [voc.text_wait] * start
    assert list(ex.text[start:start + 3]) == [10, 11, 12]
    assert list(ex.text[start + 3:]) == [voc.text_wait] * tail
    assert np.allclose(ex.text_w[:start], 0.001)
    assert np.allclose(ex.text_w[start:start + 3], 1.0)
    assert ex.audio is None
    assert sum(1 for t in range(ex.steps) if ex.text[t] < 64) == 3


def test_tts_layout_delay(world, composer):
    ex = composer.compose_tts([5, 6, 7])
    voc = world.vocab
    lead = composer.cfg.lead_steps
    assert ex.steps == lead + 1 + 3 + 2 + composer.cfg.tail_steps
    r = ex.meta["response_start"]
    assert r == lead + 1
    # exactly D=2 all-wait groups between text onset and audio onset
    assert np.all(ex.audio[r] == voc.audio_wait)
    assert np.all(ex.audio[r + 1] == voc.audio_wait)
    assert np.all(ex.audio[r + 2] == world.audio_tokens_of([5])[0])
    assert np.allclose(ex.audio_w[r], 0.001)
    assert np.allclose(ex.audio_w[r + 1], 0.001)
    content_groups = sum(1 for t in range(ex.steps)
                         if ex.audio[t][0] < 32)
    assert content_groups == 3


def test_s2td_has_no_audio(world, composer):
    ex = composer.compose_s2td(world.qa.train_keys[0])
    assert ex.audio is None
    ex2 = composer.compose_s2tsd(world.qa.train_keys[0])
    assert ex2.audio is not None
    assert np.array_equal(ex.text, ex2.text)


def test_s2tsd_answer_right_after_query(world, composer):
    key = world.qa.train_keys[3]
    ex = composer.compose_s2tsd(key)
    r = ex.meta["response_start"]
    assert r == composer.cfg.lead_steps + 1 + 3
    assert list(ex.text[r:r + 4]) == world.qa.answer_of(key)
    assert np.allclose(ex.text_w[r:r + 4], 1.0)


def test_empty_inputs_rejected(composer):
    with pytest.raises(ComposeError):
        composer.compose_asr([])
    with pytest.raises(ComposeError):
        composer.compose_tts([])


def test_interruption_int_placement(world, composer):
    rng = np.random.default_rng(5)
    voc = world.vocab
    for _ in range(60):
        plan = world.gen_episode("interrupt_dep", rng)
        ex = composer.compose_duplex(plan, rng)
        onset, d, i = ex.meta["onset"], ex.meta["overlap"], ex.meta["int_step"]
        assert i - onset == d
        assert ex.text[i] == voc.text_int
        assert np.all(ex.audio[i] == voc.audio_int)
        assert ex.text_w[i] == 50.0
        assert np.allclose(ex.audio_w[i], 50.0)
        # trigger constraint: onset strictly after the trigger was spoken
        spoken = ex.meta["response_start"] + plan.trigger_index + composer.cfg.delay
        assert onset > spoken


def test_interruption_reply_follows(world, composer):
    rng = np.random.default_rng(6)
    plan = world.gen_episode("interrupt_indep", rng)
    ex = composer.compose_duplex(plan, rng)
    r2 = ex.meta["reply_start"]
    assert list(ex.text[r2:r2 + 4]) == ex.meta["interrupt_answer"]
    # reply audio respects the delay law relative to the reply onset
    voc = world.vocab
    for t in range(r2, r2 + composer.cfg.delay):
        assert np.all(ex.audio[t] == voc.audio_wait)


def test_no_int_supervision_replaces_int_with_wait(world):
    cfg = ComposerConfig(int_supervision=False)
    comp = Composer(world, cfg)
    rng = np.random.default_rng(7)
    plan = world.gen_episode("interrupt_indep", rng)
    ex = comp.compose_duplex(plan, rng)
    i = ex.meta["int_step"]
    voc = world.vocab
    assert ex.text[i] == voc.text_wait
    assert np.all(ex.audio[i] == voc.audio_wait)
    assert ex.text_w[i] == cfg.w_wait


def test_backchannel_streams_continue(world, composer):
    rng = np.random.default_rng(8)
    plan = world.gen_episode("backchannel", rng)
    ex = composer.compose_duplex(plan, rng)
    plain = type(plan)(kind="plain", base_key=plan.base_key,
                       lead_silence=plan.lead_silence)
    ex_plain = composer.compose_duplex(plain, np.random.default_rng(8))
    assert np.array_equal(ex.text, ex_plain.text)
    assert np.array_equal(ex.audio, ex_plain.audio)
    b = ex.meta["backchannel_step"]
    r = ex.meta["response_start"]
    assert r + 2 <= b <= r + RESPONSE_LEN - 3
    assert ex.user[b][0] == "speech"


def test_plan_rejected_when_constraints_unsatisfiable(world):
    cfg = ComposerConfig(overlap_support=(9,), overlap_probs=(1.0,))
    comp = Composer(world, cfg)
    rng = np.random.default_rng(9)
    plan = world.gen_episode("interrupt_dep", rng)
    with pytest.raises(PlanRejected):
        comp.compose_duplex(plan, rng)


def test_sample_overlap_fixed_config():
    cfg = ComposerConfig(overlap_support=(2,), overlap_probs=(1.0,))
    rng = np.random.default_rng(0)
    assert all(sample_overlap(cfg, rng) == 2 for _ in range(20))


def test_sample_overlap_support_bounds():
    cfg = ComposerConfig()
    rng = np.random.default_rng(1)
    draws = [sample_overlap(cfg, rng) for _ in range(2000)]
    assert min(draws) >= 2 and max(draws) <= 6


def test_sample_overlap_empirical_distribution():
    cfg = ComposerConfig()
    rng = np.random.default_rng(2)
    n = 100_000
    draws = np.array([sample_overlap(cfg, rng) for _ in range(n)])
    for d, p in zip(cfg.overlap_support, cfg.overlap_probs):
        assert abs((draws == d).mean() - p) < 0.01


def test_bad_configs_rejected():
    with pytest.raises(ComposeError):
        ComposerConfig(overlap_probs=(0.5, 0.5))
    with pytest.raises(ComposeError):
        ComposerConfig(overlap_support=(2, 3), overlap_probs=(0.9, 0.2))
    with pytest.raises(ComposeError):
        ComposerConfig(w_wait=0.0)


def test_composition_pure_given_rng_state(world, composer):
    plan = world.gen_episode("interrupt_dep", np.random.default_rng(3))
    a = composer.compose_duplex(plan, np.random.default_rng(55))
    b = composer.compose_duplex(plan, np.random.default_rng(55))
    assert np.array_equal(a.text, b.text)
    assert np.array_equal(a.audio, b.audio)
    assert a.user == b.user and a.meta == b.meta


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1),
       st.sampled_from(["plain", "smooth", "backchannel",
                        "interrupt_dep", "interrupt_indep"]))
def test_stream_equality_and_laws_random(world, composer, seed, kind):
    rng = np.random.default_rng(seed)
    plan = world.gen_episode(kind, rng)
    try:
        ex = composer.compose_duplex(plan, rng)
    except PlanRejected:
        return
    ex.validate(world, composer.cfg)
    assert len(ex.user) == len(ex.text) == ex.audio.shape[0]
    # loss-weight law over the whole example
    voc = world.vocab
    for t in range(ex.steps):
        tok = int(ex.text[t])
        want = (0.001 if tok == voc.text_wait
                else 50.0 if tok == voc.text_int else 1.0)
        assert ex.text_w[t] == want


def test_render_example_golden(world, composer):
    ex = composer.compose_asr([10, 11])
    steps = composer.cfg.lead_steps + 5 + composer.cfg.tail_steps
    text = render_example(ex, world)
    lines = text.strip().splitlines()
    assert lines[0] == f"[asr] steps={steps}"
    assert lines[1].startswith("user  |")
    assert "P1" in lines[1]          # ASR prompt marker
    assert "10" in lines[2] and "11" in lines[2]
    assert lines[3].endswith("- " * (steps - 1) + "-")
