import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpm.tensor import (Rng, TensorFormatError, elementwise_add, flat_index, load_tensor, matmul,
                        save_tensor, tensor_from_bytes, tensor_to_bytes, uniform, unflatten_index, zeros)
from oracles import naive_matmul


def test_zeros():
    z = zeros([1, 1, 2, 2])
    assert z.size == 4 and z.dtype == np.float32 and not z.any()
    assert zeros([2, 3, 4, 5]).size == 120
    with pytest.raises(ValueError):
        zeros([1, 0, 1, 1])
    with pytest.raises(ValueError):
        zeros([1, 1, 1, 1, 1])


def test_elementwise_add():
    np.testing.assert_array_equal(elementwise_add(np.float32([1, 2]), np.float32([3, 4])), [4, 6])
    x = np.float32([[1.5, -2.0]])
    np.testing.assert_array_equal(elementwise_add(x, zeros(x.shape)), x)
    with pytest.raises(ValueError):
        elementwise_add(np.zeros(2), np.zeros(3))


def test_add_large_values_stays_finite():
    out = elementwise_add(np.float32([1e30]), np.float32([1e30]))
    assert np.isfinite(out).all()
    # widened-precision reference
    assert out[0] == np.float32(np.float64(1e30) + np.float64(1e30))


def test_matmul_small_cases():
    a = np.float32([[1, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(np.eye(2, dtype=np.float32), a), a)
    np.testing.assert_array_equal(matmul(a, np.float32([[1], [1]])), [[3], [7]])
    with pytest.raises(ValueError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_matches_loops():
    rng = np.random.default_rng(3)
    a = rng.uniform(-1, 1, (7, 5)).astype(np.float32)
    b = rng.uniform(-1, 1, (5, 3)).astype(np.float32)
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-6, atol=1e-6)


def test_uniform_determinism_and_range():
    a = uniform(Rng(42), [1, 1, 1, 4], 0.0, 1.0)
    b = uniform(Rng(42), [1, 1, 1, 4], 0.0, 1.0)
    np.testing.assert_array_equal(a, b)
    x = uniform(Rng(1), [100000], 0.0, 1.0)
    assert x.min() >= 0 and x.max() < 1
    # mean of 1e5 U(0,1): sd = 0.29/sqrt(1e5) ~ 9e-4, so +-0.01 is > 10 sd
    assert 0.49 <= x.mean() <= 0.51
    with pytest.raises(ValueError):
        uniform(Rng(0), [2], 1.0, 1.0)


def test_uniform_never_returns_hi():
    x = uniform(Rng(5), [10000], 1.0, 1.0000001)
    assert (x < np.float32(1.0000001)).all()


def test_child_streams_independent_of_call_order():
    r1 = Rng(9)
    r1.random(100)
    a = r1.child("x").random(3)
    b = Rng(9).child("x").random(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(Rng(9).child("x").random(3), Rng(9).child("y").random(3))


@settings(max_examples=200)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.data())
def test_index_round_trip(shape, data):
    index = tuple(data.draw(st.integers(0, s - 1)) for s in shape)
    offset = flat_index(shape, index)
    assert unflatten_index(shape, offset) == index
    assert 0 <= offset < int(np.prod(shape))


@settings(max_examples=50)
@given(st.lists(st.floats(-1e6, 1e6, width=32), min_size=1, max_size=20))
def test_add_commutative_with_zero_identity(vals):
    a = np.float32(vals)
    b = a[::-1].copy()
    np.testing.assert_array_equal(elementwise_add(a, b), elementwise_add(b, a))
    np.testing.assert_array_equal(elementwise_add(a, np.zeros_like(a)), a)


def test_serialization_layout():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    raw = tensor_to_bytes(arr)
    assert raw[:4] == b"HPMT" and raw[4] == 1 and raw[5] == 2
    assert raw[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert raw[14:] == arr.astype("<f4").tobytes()
    back, end = tensor_from_bytes(raw)
    assert end == len(raw)
    np.testing.assert_array_equal(back, arr)


def test_serialization_errors(tmp_path):
    raw = bytearray(tensor_to_bytes(np.ones((2, 2), dtype=np.float32)))
    with pytest.raises(TensorFormatError):
        tensor_from_bytes(bytes(raw[:-1]))
    raw[0:4] = b"XXXX"
    with pytest.raises(TensorFormatError):
        tensor_from_bytes(bytes(raw))
    path = os.path.join(tmp_path, "t.bin")
    save_tensor(path, np.float32([[1, 2]]))
    np.testing.assert_array_equal(load_tensor(path), [[1, 2]])
