"""Audio head: grouping, delay alignment, feedback embedding, chain rule."""

import math

import numpy as np
import pytest

from duplexlab.audio_head import AudioHead, AudioHeadConfig
from duplexlab.compose import align_streams
from duplexlab.nn import tensor as T
from duplexlab.nn.layers import ParamStore
from duplexlab.vocab import Vocab

rng = np.random.default_rng(33)


@pytest.fixture(scope="module")
def head():
    store = ParamStore()
    return AudioHead(store, np.random.default_rng(6), AudioHeadConfig(),
                     Vocab(), d_model=64)


def test_greedy_decode_deterministic(head):
    hidden = rng.normal(size=64)
    a = head.decode_group(head.new_cache(), hidden, 0, head.vocab.audio_bos)
    b = head.decode_group(head.new_cache(), hidden, 0, head.vocab.audio_bos)
    assert a == b and len(a) == 4


def test_group_loglik_matches_chain_rule(head):
    # teacher-forced group log-likelihood == sum of per-token log-probs
    voc = head.vocab
    audio = rng.integers(0, 32, size=(3, 4))
    hidden = T.Tensor(rng.normal(size=(3, 64)))
    logits = head.logits_teacher(audio.reshape(-1), hidden).data
    flat = audio.reshape(-1)
    total = 0.0
    for j in range(len(flat)):
        row = logits[j] - logits[j].max()
        logp = row[flat[j]] - math.log(np.exp(row).sum())
        total += logp
    loss = T.cross_entropy_sum(head.logits_teacher(audio.reshape(-1), hidden),
                               flat, np.ones(len(flat)))
    assert abs(-loss.item() - total) < 1e-9


def test_incremental_decode_matches_teacher_logits(head):
    """Head cache consistency: step-wise argmax == full-run argmax."""
    audio = rng.integers(0, 32, size=(4, 4))
    hidden = rng.normal(size=(4, 64))
    with T.no_grad():
        logits = head.logits_teacher(audio.reshape(-1),
                                     T.Tensor(hidden)).data
    offline = np.argmax(logits, axis=1).reshape(4, 4)
    caches = head.new_cache()
    prev = head.vocab.audio_bos
    got = []
    for t in range(4):
        preds = head.decode_group(caches, hidden[t], t, prev,
                                  force_tokens=audio[t])
        got.append(preds)
        prev = int(audio[t][-1])
    assert np.array_equal(np.array(got), offline)


def test_head_causality_in_backbone_steps(head):
    audio = rng.integers(0, 32, size=(5, 4))
    h1 = rng.normal(size=(5, 64))
    h2 = h1.copy()
    h2[3:] = rng.normal(size=(2, 64))
    with T.no_grad():
        a = head.logits_teacher(audio.reshape(-1), T.Tensor(h1)).data
        b = head.logits_teacher(audio.reshape(-1), T.Tensor(h2)).data
    assert np.abs(a[:12] - b[:12]).max() == 0.0  # groups 0..2 unchanged
    assert np.abs(a[12:] - b[12:]).max() > 0


def test_all_wait_group_embeds_to_dedicated_vector(head):
    voc = head.vocab
    wait = [voc.audio_wait] * 4
    a = head.embed_group_np(wait)
    b = head.embed_group_np(wait)
    assert np.array_equal(a, b)
    # mean aggregation: the wait feedback equals projecting the wait embedding
    manual = head.fb_proj.apply_np(head.embed.data[voc.audio_wait][None, :])[0]
    assert np.abs(a - manual).max() < 1e-12


def test_mean_embedding_permutation_invariant(head):
    grp = [3, 17, 9, 28]
    a = head.embed_group_np(grp)
    b = head.embed_group_np(list(reversed(grp)))
    assert np.abs(a - b).max() < 1e-12


def test_concat_embedding_order_sensitive():
    store = ParamStore()
    chead = AudioHead(store, np.random.default_rng(6),
                      AudioHeadConfig(embed_mode="concat"), Vocab(), d_model=64)
    a = chead.embed_group_np([3, 17, 9, 28])
    b = chead.embed_group_np([28, 9, 17, 3])
    assert np.abs(a - b).max() > 0


def test_identical_groups_identical_embeddings(head):
    assert np.array_equal(head.embed_group_np([1, 2, 3, 4]),
                          head.embed_group_np([1, 2, 3, 4]))


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        AudioHeadConfig(group_size=0)
    with pytest.raises(ValueError):
        AudioHeadConfig(delay=-1)
    with pytest.raises(ValueError):
        AudioHeadConfig(embed_mode="sum")


# --- align_streams -------------------------------------------------------------

def test_align_no_padding_needed():
    assert align_streams(10, 8, g=4, d=2) == (10, 10)


def test_align_pads_text():
    assert align_streams(5, 8, g=4, d=2) == (10, 10)


def test_align_absent_audio():
    assert align_streams(7, 0, g=4, d=2) == (7, 0)
