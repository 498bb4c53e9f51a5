import numpy as np
import pytest

from tbscreen import ShapeError, concat_last, flatten, reshape
from tbscreen.tensor import as_tensor, split_last


def test_reshape_keeps_row_major_order():
    t = np.arange(24.0).reshape(2, 3, 4)
    r = reshape(t, (6, 4))
    assert r.shape == (6, 4)
    np.testing.assert_array_equal(r.ravel(), t.ravel())


def test_reshape_rejects_count_mismatch():
    with pytest.raises(ShapeError):
        reshape(np.zeros((7, 7, 512)), (49, 500))


def test_feature_map_to_sequence():
    t = np.random.default_rng(0).random((7, 7, 512))
    seq = reshape(t, (49, 512))
    # row i*7+j of the sequence is spatial position (i, j)
    np.testing.assert_array_equal(seq[3 * 7 + 5], t[3, 5])


def test_concat_and_split_roundtrip():
    a, b = np.ones((4, 3)), np.zeros((4, 5))
    c = concat_last(a, b)
    assert c.shape == (4, 8)
    a2, b2 = split_last(c, 3)
    np.testing.assert_array_equal(a2, a)
    np.testing.assert_array_equal(b2, b)


def test_concat_rejects_leading_mismatch():
    with pytest.raises(ShapeError):
        concat_last(np.ones((4, 3)), np.ones((5, 3)))


def test_flatten_and_dtype():
    assert flatten(np.zeros((49, 256))).shape == (12544,)
    assert as_tensor([1, 2]).dtype == np.float64
