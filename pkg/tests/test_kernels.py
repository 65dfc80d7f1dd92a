"""Backend parity: compiled extension vs numpy fallback."""

import numpy as np
import pytest

from duplexlab.nn import _kernels_np as knp

ck = pytest.importorskip("duplexlab.nn._ck")

rng = np.random.default_rng(11)


def test_softmax_causal_parity():
    for h, tq, tk in [(1, 1, 1), (4, 7, 7), (2, 3, 9)]:
        s = np.ascontiguousarray(rng.normal(size=(h, tq, tk)))
        qp = np.minimum(np.arange(tq) + (tk - tq), tk - 1).astype(np.int64)
        a, b = knp.softmax_causal(s, qp), ck.softmax_causal(s, qp)
        assert np.abs(a - b).max() < 1e-12
        assert np.allclose(a.sum(axis=2), 1.0)


def test_softmax_causal_bwd_parity():
    p = knp.softmax_causal(
        np.ascontiguousarray(rng.normal(size=(2, 5, 5))),
        np.arange(5, dtype=np.int64))
    dp = np.ascontiguousarray(rng.normal(size=p.shape))
    assert np.abs(knp.softmax_causal_bwd(p, dp)
                  - ck.softmax_causal_bwd(p, dp)).max() < 1e-12


def test_rmsnorm_parity():
    x = np.ascontiguousarray(rng.normal(size=(9, 16)))
    g = rng.normal(size=16) + 1.0
    (y1, r1), (y2, r2) = knp.rmsnorm(x, g, 1e-6), ck.rmsnorm(x, g, 1e-6)
    assert np.abs(y1 - y2).max() < 1e-12
    dy = np.ascontiguousarray(rng.normal(size=x.shape))
    (dx1, dg1), (dx2, dg2) = (knp.rmsnorm_bwd(x, g, r1, dy),
                              ck.rmsnorm_bwd(x, g, r2, dy))
    assert np.abs(dx1 - dx2).max() < 1e-12
    assert np.abs(dg1 - dg2).max() < 1e-12


def test_rope_parity_2d_and_3d():
    pos = np.arange(6, dtype=np.float64) * 3.0
    for shape in [(6, 8), (2, 6, 8)]:
        x = np.ascontiguousarray(rng.normal(size=shape))
        a = knp.rope_apply(x, pos, 10000.0, 1.0)
        b = ck.rope_apply(x, pos, 10000.0, 1.0)
        assert np.abs(a - b).max() < 1e-12
        assert a.shape == x.shape


def test_rope_inverse_roundtrip():
    x = np.ascontiguousarray(rng.normal(size=(5, 8)))
    pos = np.arange(5, dtype=np.float64)
    y = ck.rope_apply(ck.rope_apply(x, pos, 10000.0, 1.0), pos, 10000.0, -1.0)
    assert np.abs(x - y).max() < 1e-12


def test_ce_parity():
    logits = np.ascontiguousarray(rng.normal(size=(7, 12)))
    targets = rng.integers(0, 12, size=7)
    weights = rng.uniform(0.5, 2.0, size=7)
    (l1, p1) = knp.ce_rows(logits, targets, weights)
    (l2, p2) = ck.ce_rows(logits, targets, weights)
    assert abs(l1 - l2) < 1e-10
    d1 = knp.ce_rows_bwd(p1, targets, weights, 1.7)
    d2 = ck.ce_rows_bwd(p2, targets, weights, 1.7)
    assert np.abs(d1 - d2).max() < 1e-12


def test_silu_parity():
    x = np.ascontiguousarray(rng.normal(size=(4, 6)) * 10)
    dy = np.ascontiguousarray(rng.normal(size=(4, 6)))
    assert np.abs(knp.silu(x) - ck.silu(x)).max() < 1e-12
    assert np.abs(knp.silu_bwd(x, dy) - ck.silu_bwd(x, dy)).max() < 1e-12
