import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st

from spr.errors import ContractError
from spr.losses import (LossReport, contrastive_loss, contrastive_with_grad, cross_entropy,
                        one_hot, prototype_similarity, total_contrastive)
from spr.numerics import IGNORE


def loop_ce(logits, labels):
    total = 0.0
    for x, y in zip(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1)):
        if y == IGNORE:
            continue
        total += -(x[y] - math.log(sum(math.exp(v) for v in x)))
    return total


def test_cross_entropy_examples(rng):
    assert cross_entropy(np.zeros((1, 1, 2)), np.array([[0]])) == pytest.approx(math.log(2))
    assert cross_entropy(np.array([[[50.0, 0.0]]]), np.array([[0]])) < 1e-6
    logits, labels = rng.normal(size=(4, 4, 3)), rng.integers(-1, 3, size=(4, 4))
    assert cross_entropy(logits, labels) == pytest.approx(loop_ce(logits, labels), abs=1e-5)


def test_cross_entropy_all_ignore_and_mean():
    with pytest.raises(ContractError):
        cross_entropy(np.zeros((2, 2)), np.array([IGNORE, IGNORE]))
    logits = np.zeros((4, 3))
    assert cross_entropy(logits, np.array([0, 1, 2, IGNORE]), "mean") == pytest.approx(math.log(3))


def test_uniform_logits_give_n_log_c(rng):
    labels = rng.integers(0, 5, size=(6, 7))
    assert cross_entropy(np.zeros((6, 7, 5)), labels) == pytest.approx(42 * math.log(5), abs=1e-5)


@given(st.integers(0, 2 ** 31), st.floats(0.01, 5.0))
def test_cross_entropy_decreases_when_correct_logit_rises(seed, bump):
    rng = np.random.default_rng(seed)
    logits, labels = rng.normal(size=(3, 4)), rng.integers(0, 4, size=3)
    up = logits.copy()
    up[1, labels[1]] += bump
    assert cross_entropy(up, labels) < cross_entropy(logits, labels)


def test_similarity_examples():
    s = prototype_similarity(np.array([[1.0, 1.0]]), np.eye(2) * 2.0, np.ones(1), 1.0).s
    npt.assert_allclose(s, [[0.5, 0.5]])
    s = prototype_similarity(np.array([[math.log(2), 0.0]]), np.eye(2), np.ones(1), 1.0).s
    npt.assert_allclose(s, [[2 / 3, 1 / 3]], atol=1e-7)
    s = prototype_similarity(np.array([[5.0, -3.0, 1.0]]), np.eye(3), np.zeros(1), 1.0).s
    npt.assert_allclose(s, [[1 / 3] * 3])
    with pytest.raises(ContractError):
        prototype_similarity(np.ones((1, 2)), np.eye(2), np.ones(1), 0.0)


def test_contrastive_examples(rng):
    assert contrastive_loss(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]])) == pytest.approx(math.log(2))
    emb, p = rng.normal(size=(4, 4, 3)), rng.normal(size=(3, 3))
    w, labels = rng.random(16), rng.integers(-1, 3, size=(4, 4))
    sim = prototype_similarity(emb, p, w, 0.7)
    want = 0.0
    for x, y, wt in zip(emb.reshape(-1, 3), labels.reshape(-1), w):
        if y == IGNORE:
            continue
        z = [wt * sum(x[d] * p[d, c] for d in range(3)) / 0.7 for c in range(3)]
        want -= z[y] - math.log(sum(math.exp(v) for v in z))
    assert contrastive_loss(sim, one_hot(labels, 3)) == pytest.approx(want, abs=1e-5)
    assert contrastive_with_grad(emb, p, w, labels, 0.7)[0] == pytest.approx(want, abs=1e-5)


@given(st.integers(0, 2 ** 31), st.floats(0.05, 1.0), st.floats(1.01, 20.0))
def test_similarity_rows_and_temperature_argmax(seed, tau, factor):
    rng = np.random.default_rng(seed)
    emb, p, w = rng.normal(size=(10, 3)), rng.normal(size=(3, 4)), rng.random(10)
    a = prototype_similarity(emb, p, w, tau).s
    b = prototype_similarity(emb, p, w, tau * factor).s
    npt.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
    z = emb @ p
    distinct = np.sort(z, axis=1)[:, -1] - np.sort(z, axis=1)[:, -2] > 1e-9
    npt.assert_array_equal(a.argmax(1)[distinct], b.argmax(1)[distinct])


@given(st.integers(0, 2 ** 31))
def test_contrastive_non_negative(seed):
    rng = np.random.default_rng(seed)
    s = rng.dirichlet(np.ones(3), size=5)
    labels = rng.integers(-1, 3, size=5)
    assert contrastive_loss(s, one_hot(labels, 3)) >= 0.0


def test_contrastive_zero_iff_perfect():
    s = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert contrastive_loss(s, one_hot(np.array([0, 1]), 2)) == 0.0
    assert contrastive_loss(s + [[-1e-3, 1e-3], [0, 0]], one_hot(np.array([0, 1]), 2)) > 0.0


def test_total_contrastive():
    assert total_contrastive(0.0, 0.0) == 0.0
    assert total_contrastive(1.5, 2.5) == 4.0
    with pytest.raises(ContractError):
        total_contrastive(float("nan"), 1.0)


def test_report_dict():
    d = LossReport(10.0, 1.0, 2.0, 3.0, 5, 4).to_dict()
    assert d["l_ce_mean"] == 2.0 and d["l_t_mean"] == 0.5 and d["l_c"] == 3.0
