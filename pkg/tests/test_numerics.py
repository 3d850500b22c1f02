import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedamd.errors import DimensionError
from fedamd.numerics import (
    SERVER,
    Purpose,
    axpy,
    l2_norm_sq,
    mix64,
    ordered_mean,
    ordered_sum,
    stream,
    stream_key,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


@pytest.mark.parametrize(
    "alpha,x,y,want",
    [(0.0, [1, 2], [3, 4], [3, 4]), (1.0, [1, 2], [0, 0], [1, 2]), (-0.5, [2, 4], [1, 1], [0, -1])],
)
def test_axpy_examples(alpha, x, y, want):
    x, y = np.array(x, float), np.array(y, float)
    x0, y0 = x.copy(), y.copy()
    assert np.array_equal(axpy(alpha, x, y), want)
    assert np.array_equal(x, x0) and np.array_equal(y, y0)


def test_axpy_length_mismatch():
    with pytest.raises(DimensionError):
        axpy(1.0, np.zeros(2), np.zeros(3))


@pytest.mark.parametrize("x,want", [([0, 0, 0], 0.0), ([3, 4], 25.0), ([1, 1, 1, 1], 4.0)])
def test_l2_norm_sq_examples(x, want):
    assert l2_norm_sq(np.array(x, float)) == want


# squares of |x| < ~1e-154 underflow to zero in float64, so entries are zero or larger
not_tiny = st.one_of(st.just(0.0), st.floats(1e-150, 1e6), st.floats(-1e6, -1e-150))


@given(arrays(np.float64, st.integers(1, 20), elements=not_tiny))
def test_l2_norm_zero_iff_zero_vector(x):
    assert (l2_norm_sq(x) == 0.0) == (not np.any(x))
    assert l2_norm_sq(x) >= 0.0


def test_mix64_matches_splitmix64_reference():
    # published SplitMix64 outputs for state 0: the finalizer of 1x and 2x the increment
    assert mix64(0) == 0xE220A8397B1DCDAF
    assert mix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4
    assert mix64((2 * 0x9E3779B97F4A7C15) & ((1 << 64) - 1)) == 0x06C45D188009454F


def test_stream_same_tuple_same_draws():
    a = stream(7, 3, 2, Purpose.BATCH_SAMPLING).random(16)
    b = stream(7, 3, 2, Purpose.BATCH_SAMPLING).random(16)
    assert np.array_equal(a, b)


def test_stream_differs_by_purpose_and_client():
    base = stream(7, 3, 2, Purpose.BATCH_SAMPLING).random(16)
    other_purpose = stream(7, 3, 2, Purpose.CLIENT_SELECTION).random(16)
    other_client = stream(7, 3, 5, Purpose.BATCH_SAMPLING).random(16)
    assert not np.any(base == other_purpose)
    assert not np.any(base == other_client)


def test_stream_keys_distinct_over_grid():
    keys = {
        stream_key(s, t, c, p)
        for s in range(3)
        for t in range(20)
        for c in [SERVER] + list(range(20))
        for p in Purpose
    }
    assert len(keys) == 3 * 20 * 21 * len(Purpose)


def test_stream_rejects_negative_round():
    with pytest.raises(ValueError):
        stream(0, -1, 0, Purpose.BATCH_SAMPLING)


def test_streams_look_independent():
    # correlation of neighbouring client streams stays at the 1/sqrt(n) noise level
    n = 20000
    a = stream(1, 0, 0, Purpose.BATCH_SAMPLING).standard_normal(n)
    b = stream(1, 0, 1, Purpose.BATCH_SAMPLING).standard_normal(n)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4.0 / np.sqrt(n)


@settings(max_examples=50)
@given(st.lists(arrays(np.float64, 3, elements=finite), min_size=1, max_size=8))
def test_ordered_sum_is_left_fold(vs):
    want = vs[0].copy()
    for v in vs[1:]:
        want = want + v
    assert np.array_equal(ordered_sum(vs), want)
    assert np.array_equal(ordered_mean(vs), want / len(vs))


def test_ordered_sum_errors():
    with pytest.raises(ValueError):
        ordered_sum([])
    with pytest.raises(DimensionError):
        ordered_sum([np.zeros(2), np.zeros(3)])
