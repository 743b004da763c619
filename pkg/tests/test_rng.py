import numpy as np
import pytest

from nadlab.rng import Rng


def test_identical_seed_stream_bit_identical():
    a = Rng(1234, 7).gaussian((100,))
    b = Rng(1234, 7).gaussian((100,))
    assert np.array_equal(a, b)


def test_distinct_streams_differ():
    a = Rng(1234, 0).gaussian((100,))
    b = Rng(1234, 1).gaussian((100,))
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.3


def test_zero_std_gives_exact_zeros():
    assert not Rng(0).gaussian((50,), std=0.0).any()


def test_negative_std_rejected():
    with pytest.raises(ValueError):
        Rng(0).gaussian((3,), std=-1.0)


def test_sample_variance_converges():
    draws = Rng(99).gaussian((1_000_000,), std=1.0)
    assert 0.99 <= draws.var() <= 1.01


def test_child_streams_deterministic_and_independent():
    parent = Rng(5, 3)
    c1 = parent.child(0).gaussian((64,))
    c1_again = Rng(5, 3).child(0).gaussian((64,))
    c2 = parent.child(1).gaussian((64,))
    assert np.array_equal(c1, c1_again)
    assert not np.array_equal(c1, c2)


def test_child_is_not_parent_stream():
    parent = Rng(5, 3)
    assert parent.child(0).stream != parent.stream


def test_signs_are_balanced():
    y = Rng(11).signs(10000)
    assert set(np.unique(y)) == {-1.0, 1.0}
    # 3-sigma binomial bound around the mean
    assert abs(y.mean()) < 3.0 / np.sqrt(10000)
