"""Prediction API simulation: resize, truncation, ledger accounting."""

import numpy as np
import pytest

from evasionlab import nn
from evasionlab.api import (BudgetExceededError, ClipUnit, FullResponse,
                            LabelResponse, Postprocessor, PredictionApi,
                            Preprocessor, QueryLedger, ResizeBilinear,
                            TopKResponse, postprocess, resize_adjoint,
                            resize_bilinear, top_k_entries)


# ---------------------------------------------------------------------------
# ledger

def test_ledger_unlimited():
    led = QueryLedger()
    for _ in range(1000):
        led.charge()
    assert led.used == 1000
    assert led.remaining is None


def test_ledger_hard_cap():
    led = QueryLedger(budget=3)
    for _ in range(3):
        led.charge()
    assert led.remaining == 0
    with pytest.raises(BudgetExceededError) as exc:
        led.charge()
    assert exc.value.used == 3
    # a refused charge does not consume anything
    assert led.used == 3


# ---------------------------------------------------------------------------
# resize

def test_resize_identity_is_copy():
    x = np.random.default_rng(0).uniform(size=(1, 5, 5))
    y = resize_bilinear(x, 5, 5)
    np.testing.assert_array_equal(x, y)
    y[0, 0, 0] = 99.0
    assert x[0, 0, 0] != 99.0


def test_resize_preserves_constant_images():
    # row-stochastic weights: interpolation of a constant is constant
    x = np.full((2, 7, 11), 0.37)
    for h, w in ((16, 16), (3, 5), (20, 4)):
        np.testing.assert_allclose(resize_bilinear(x, h, w), 0.37)


def test_resize_round_trip_is_near_identity_on_smooth_fields():
    c = np.linspace(0.0, 1.0, 12)
    x = (c[None, :, None] + c[None, None, :]) / 2.0
    up = resize_bilinear(x, 24, 24)
    back = resize_bilinear(up, 12, 12)
    assert np.abs(back - x).max() < 0.02


def test_resize_adjoint_dot_product_identity():
    # <R x, y> == <x, R* y> for random tensors
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 9, 13))
    y = rng.normal(size=(1, 16, 16))
    rx = resize_bilinear(x, 16, 16)
    ay = resize_adjoint(y, 9, 13)
    assert np.allclose((rx * y).sum(), (x * ay).sum())


def test_resize_rejects_bad_rank():
    with pytest.raises(ValueError, match="tensor"):
        resize_bilinear(np.zeros((4, 4)), 2, 2)
    with pytest.raises(ValueError, match="tensor"):
        resize_adjoint(np.zeros(4), 2, 2)


def test_preprocessor_pipeline():
    assert Preprocessor().apply(np.full((1, 2, 2), 0.5)).shape == (1, 2, 2)
    pre = Preprocessor(steps=(ResizeBilinear(4, 4), ClipUnit()))
    out = pre.apply(np.full((1, 8, 8), 1.7))
    assert out.shape == (1, 4, 4)
    assert out.max() <= 1.0
    pre2 = Preprocessor.resize_to(6, 6)
    assert pre2.apply(np.zeros((1, 3, 3))).shape == (1, 6, 6)


# ---------------------------------------------------------------------------
# truncation

def test_top_k_entries_against_sort_oracle():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n = int(rng.integers(2, 12))
        k = int(rng.integers(1, n + 1))
        probs = rng.uniform(size=n)
        got = top_k_entries(probs, k)
        want = sorted(range(n), key=lambda i: (-probs[i], i))[:k]
        assert [lbl for lbl, _ in got] == want
        assert all(s == probs[lbl] for lbl, s in got)


def test_top_k_tie_prefers_lower_label():
    entries = top_k_entries(np.array([0.4, 0.4, 0.2]), 2)
    assert [lbl for lbl, _ in entries] == [0, 1]


def test_top_k_rejects_oversized_k():
    with pytest.raises(ValueError, match="exceeds"):
        top_k_entries(np.array([0.5, 0.5]), 3)


def test_postprocess_kinds():
    probs = np.array([0.1, 0.6, 0.3])
    full = postprocess(probs, Postprocessor())
    assert isinstance(full, FullResponse)
    assert full.top1() == 1 and full.contains(0)
    assert full.score_of(2) == pytest.approx(0.3)

    lab = postprocess(probs, Postprocessor(kind="label_only"))
    assert isinstance(lab, LabelResponse)
    assert lab.top1() == 1
    assert lab.contains(1) and not lab.contains(0)
    assert lab.score_of(1) is None

    top = postprocess(probs, Postprocessor(kind="top_k", k=2))
    assert isinstance(top, TopKResponse)
    assert top.top1() == 1
    assert top.contains(2) and not top.contains(0)
    # masked labels read as zero, not an error
    assert top.score_of(0) == 0.0
    assert top.score_of(1) == pytest.approx(0.6)


def test_postprocessor_validation():
    with pytest.raises(ValueError, match="unknown"):
        Postprocessor(kind="softmax")
    with pytest.raises(ValueError, match="k >= 1"):
        Postprocessor(kind="top_k")
    with pytest.raises(ValueError, match="k >= 1"):
        Postprocessor(kind="top_k", k=0)


# ---------------------------------------------------------------------------
# assembled API

def _tiny_api(budget=None, k=1, side=4, native=None):
    net = nn.make_mlp((1, native or side, native or side), (8,), 3, seed=0)
    pre = Preprocessor.resize_to(native, native) if native else Preprocessor()
    return PredictionApi(model=net, pre=pre,
                         post=Postprocessor(kind="top_k", k=k),
                         ledger=QueryLedger(budget=budget))


def test_api_charges_once_per_query():
    apiobj = _tiny_api(budget=2)
    x = np.full((1, 4, 4), 0.5)
    apiobj.query(x)
    apiobj.query(x)
    assert apiobj.ledger.used == 2
    with pytest.raises(BudgetExceededError):
        apiobj.query(x)
    assert apiobj.ledger.used == 2


def test_api_does_not_mutate_input():
    apiobj = _tiny_api(side=4)
    x = np.full((1, 4, 4), 0.5)
    before = x.copy()
    apiobj.query(x)
    np.testing.assert_array_equal(x, before)


def test_api_resize_mismatch_handled_by_pre():
    # attack-space tensors are 6x6 but the model is native 4x4
    apiobj = _tiny_api(native=4)
    resp = apiobj.query(np.full((1, 6, 6), 0.5))
    assert 0 <= resp.top1() < 3


def test_peek_label_is_free_and_matches_query():
    apiobj = _tiny_api(budget=1)
    x = np.full((1, 4, 4), 0.5)
    label = apiobj.peek_label(x)
    assert apiobj.ledger.used == 0
    assert apiobj.query(x).top1() == label
