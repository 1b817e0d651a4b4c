import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st

from spr.acceptance import brute_force_prototypes
from spr.errors import ContractError, ShapeError
from spr.numerics import IGNORE
from spr.prototypes import PrototypeState, blend_prototypes, carry_forward, estimate_prototypes


def state(cols, valid=None, gamma=0.5):
    p = np.asarray(cols, dtype=np.float64)
    return PrototypeState(p, np.ones(p.shape[1], bool) if valid is None else valid, gamma)


def test_constant_logits_single_class():
    v = np.array([1.5, -2.0, 0.25])
    logits = np.broadcast_to(v, (3, 4, 3)).copy()
    out = estimate_prototypes(logits, np.zeros((3, 4), int), 4)
    npt.assert_allclose(out.p[:, 0], v)
    npt.assert_array_equal(out.valid, [True, False, False, False])
    npt.assert_array_equal(out.p[:, 1:], 0.0)


def test_masked_mean_example():
    out = estimate_prototypes(np.array([[[1.0], [3.0], [5.0], [7.0]]]), np.zeros((1, 4), int), 1)
    assert out.p[0, 0] == 4.0


def test_matches_per_pixel_loop(rng):
    logits = rng.normal(size=(8, 8, 6))
    labels = rng.integers(-1, 4, size=(8, 8))
    want, valid = brute_force_prototypes(logits, labels, 4)
    got = estimate_prototypes(logits, labels, 4)
    npt.assert_allclose(got.p, want, atol=1e-6)
    npt.assert_array_equal(got.valid, valid)


def test_ignore_pixels_skipped():
    logits = np.array([[[1.0], [100.0]]])
    out = estimate_prototypes(logits, np.array([[0, IGNORE]]), 2)
    assert out.p[0, 0] == 1.0


def test_errors():
    with pytest.raises(ShapeError):
        estimate_prototypes(np.zeros((2, 2, 3)), np.zeros((2, 3), int), 2)
    with pytest.raises(ContractError):
        estimate_prototypes(np.zeros((2, 2, 3)), np.full((2, 2), 5), 2)
    with pytest.raises(ContractError):
        PrototypeState(np.zeros((2, 2)), [True, True], gamma=1.5)


@given(st.integers(0, 2 ** 31), st.floats(-4, 4).filter(lambda s: abs(s) > 1e-3))
def test_permutation_invariance_and_linearity(seed, s):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(5, 6, 3))
    labels = rng.integers(-1, 3, size=(5, 6))
    base = estimate_prototypes(logits, labels, 3)
    perm = rng.permutation(30)
    shuffled = estimate_prototypes(logits.reshape(30, 3)[perm], labels.reshape(30)[perm], 3)
    npt.assert_allclose(shuffled.p, base.p, atol=1e-12)
    npt.assert_allclose(estimate_prototypes(s * logits, labels, 3).p, s * base.p, atol=1e-9)


def test_blend_examples():
    assert blend_prototypes(state([[2.0]]), state([[4.0]]), 0.5).p[0, 0] == 3.0
    a, b = state([[1.0, 2.0]]), state([[7.0, 9.0]])
    npt.assert_array_equal(blend_prototypes(a, b, 1.0).p, a.p)
    s = state([[1.0, 2.0, 3.0]])
    t = state([[5.0, 5.0, 0.0]], [True, True, False])
    out = blend_prototypes(s, t, 0.5)
    npt.assert_allclose(out.p, [[3.0, 3.5, 3.0]])
    assert out.valid.all()


def test_blend_both_invalid_stays_invalid():
    s = state([[1.0, 0.0]], [True, False])
    out = blend_prototypes(s, s, 0.3)
    npt.assert_array_equal(out.valid, [True, False])
    assert out.p[0, 1] == 0.0


@given(st.integers(0, 2 ** 31), st.floats(0, 1))
def test_blend_idempotent_and_affine(seed, gamma):
    rng = np.random.default_rng(seed)
    a, b = state(rng.normal(size=(3, 4))), state(rng.normal(size=(3, 4)))
    npt.assert_allclose(blend_prototypes(a, a, gamma).p, a.p, atol=1e-12)
    total = blend_prototypes(a, b, gamma).p + blend_prototypes(b, a, gamma).p
    npt.assert_allclose(total, a.p + b.p, atol=1e-6)


def test_carry_forward_cases(rng):
    prev = state(rng.normal(size=(2, 3)))
    empty = state(np.zeros((2, 3)), [False] * 3)
    npt.assert_array_equal(carry_forward(prev, empty).p, prev.p)
    fresh = state(rng.normal(size=(2, 3)))
    npt.assert_array_equal(carry_forward(empty, fresh).p, fresh.p)


def test_carry_forward_mixed_matches_per_class_loop(rng):
    prev = state(rng.normal(size=(4, 5)), rng.random(5) < 0.5)
    new = state(rng.normal(size=(4, 5)), rng.random(5) < 0.5)
    out = carry_forward(prev, new)
    for c in range(5):
        want = new.p[:, c] if new.valid[c] else prev.p[:, c]
        npt.assert_array_equal(out.p[:, c], want)
        assert out.valid[c] == (prev.valid[c] or new.valid[c])


def test_carry_forward_momentum():
    out = carry_forward(state([[0.0]]), state([[10.0]]), momentum=0.9)
    assert out.p[0, 0] == pytest.approx(1.0)
