import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from spr.errors import ShapeError
from spr.numerics import IGNORE, MISSING, as_tensor, log_softmax_rows, masked_mean, outer, softmax_rows

finite = st.floats(-50, 50, allow_nan=False, width=64)


def test_softmax_examples():
    npt.assert_allclose(softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]], atol=1e-7)
    npt.assert_allclose(softmax_rows([[1000.0, 1000.0]]), [[0.5, 0.5]], atol=1e-7)
    npt.assert_allclose(softmax_rows([[0.0, math.log(3)]]), [[0.25, 0.75]], atol=1e-7)


def test_softmax_keeps_float64_and_defaults_to_float32():
    assert softmax_rows(np.zeros((2, 3))).dtype == np.float64
    assert softmax_rows([[1, 2, 3]]).dtype == np.float32


def test_log_softmax_matches_log_of_softmax(rng):
    m = rng.normal(scale=5, size=(7, 4))
    npt.assert_allclose(log_softmax_rows(m), np.log(softmax_rows(m)), atol=1e-12)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=12), elements=finite))
def test_softmax_rows_sum_to_one(m):
    npt.assert_allclose(softmax_rows(m).sum(axis=-1), 1.0, atol=1e-6)


@given(hnp.arrays(np.float64, (5, 4), elements=finite),
       hnp.arrays(np.float64, (5, 1), elements=finite))
def test_softmax_shift_invariance(m, c):
    npt.assert_allclose(softmax_rows(m + c), softmax_rows(m), atol=1e-6)


def test_masked_mean_examples():
    assert masked_mean(np.full((2, 2), 2.0), np.ones((2, 2))) == 2.0
    assert masked_mean([[1.0, 3.0, 5.0, 7.0]], np.ones((1, 4))) == 4.0
    assert masked_mean(np.arange(4.0).reshape(2, 2), np.zeros((2, 2))) is MISSING


def test_missing_is_not_nan():
    assert not MISSING
    assert repr(MISSING) == "MISSING"
    assert not isinstance(MISSING, float)


def test_masked_mean_shape_mismatch():
    with pytest.raises(ShapeError):
        masked_mean(np.zeros((2, 2)), np.ones((2, 3)))


@given(st.data())
def test_masked_mean_permutation_invariant(data):
    n = data.draw(st.integers(1, 30))
    ch = data.draw(hnp.arrays(np.float64, (n,), elements=finite))
    mask = data.draw(hnp.arrays(np.int8, (n,), elements=st.integers(0, 1)))
    perm = np.array(data.draw(st.permutations(range(n))))
    a, b = masked_mean(ch, mask), masked_mean(ch[perm], mask[perm])
    if a is MISSING:
        assert b is MISSING
    else:
        assert a == pytest.approx(b, abs=1e-9)


def test_outer_examples():
    npt.assert_array_equal(outer([[1.0, 2.0]]), [[1, 2], [2, 4]])
    npt.assert_array_equal(outer([0.0, 3.0]), [[0, 0], [0, 9]])
    npt.assert_array_equal(outer([1.0]), [[1]])


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-10, 10)),
       st.floats(-5, 5))
def test_outer_symmetric_and_quadratic(v, s):
    o = outer(v)
    assert np.array_equal(o, o.T)
    npt.assert_allclose(outer(s * v), s * s * o, atol=1e-6 * max(1.0, np.abs(o).max() * s * s))


def test_as_tensor_rejects_rank_five_and_empty():
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((1, 1, 1, 1, 1)))
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((0, 3)))


def test_ignore_sentinel():
    assert IGNORE == -1
