import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prefiqs import tensor_core as tc
from prefiqs.errors import NonIntegralOutputSize, ShapeMismatch, ZeroNorm


def test_l2_normalize_examples():
    np.testing.assert_allclose(tc.l2_normalize(np.array([3.0, 4.0], np.float32)), [0.6, 0.8], rtol=1e-7)
    assert tc.l2_normalize(np.array([1.0, 0.0], np.float32)).tolist() == [1.0, 0.0]
    with pytest.raises(ZeroNorm):
        tc.l2_normalize(np.array([0.0, 0.0], np.float32))
    with pytest.raises(ShapeMismatch):
        tc.l2_normalize(np.zeros(0, np.float32))


finite = st.floats(-1e3, 1e3, allow_nan=False, width=32)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float32, st.integers(1, 40), elements=finite))
def test_l2_normalize_unit_and_idempotent(v):
    if np.linalg.norm(v.astype(np.float64)) <= 1e-6:
        return
    u = tc.l2_normalize(v)
    assert abs(np.linalg.norm(u.astype(np.float64)) - 1.0) <= 1e-6
    np.testing.assert_allclose(tc.l2_normalize(u), u, atol=1e-6)
    # same direction
    assert float(np.dot(u.astype(np.float64), v.astype(np.float64))) > 0


def test_dense_examples():
    x = np.array([1, 2], np.float32)
    assert tc.dense_forward(x, np.eye(2, dtype=np.float32), np.zeros(2, np.float32)).tolist() == [1, 2]
    out = tc.dense_forward(np.ones(2, np.float32), np.array([[1, 2], [3, 4]], np.float32),
                           np.array([10, 20], np.float32))
    assert out.tolist() == [13, 27]
    assert out.dtype == np.float32
    with pytest.raises(ShapeMismatch):
        tc.dense_forward(np.ones(1, np.float32), np.ones((2, 3), np.float32), np.zeros(2, np.float32))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float32, st.integers(1, 30), elements=finite))
def test_dense_identity_is_exact(x):
    n = x.size
    out = tc.dense_forward(x, np.eye(n, dtype=np.float32), np.zeros(n, np.float32))
    assert np.array_equal(out, x)  # value-exact; -0.0 + 0.0 legitimately becomes +0.0


def test_dense_accumulates_in_double():
    # 1e8 + 1 - 1e8 is lost in float32 accumulation but kept in float64
    x = np.array([1e8, 1.0, -1e8], np.float32)
    out = tc.dense_forward(x, np.ones((1, 3), np.float32), np.zeros(1, np.float32))
    assert out[0] == 1.0


def test_conv_examples():
    x = np.array([[[1, 2], [3, 4]]], np.float32)
    out = tc.conv2d_forward(x, np.full((1, 1, 1, 1), 2, np.float32), np.zeros(1, np.float32))
    assert out.tolist() == [[[2, 4], [6, 8]]]
    out = tc.conv2d_forward(x, np.ones((1, 1, 2, 2), np.float32), np.zeros(1, np.float32))
    assert out.tolist() == [[[10]]]
    with pytest.raises(NonIntegralOutputSize):
        tc.conv2d_forward(x, np.ones((1, 1, 3, 3), np.float32), np.zeros(1, np.float32))
    with pytest.raises(ShapeMismatch):
        tc.conv2d_forward(x, np.ones((1, 2, 1, 1), np.float32), np.zeros(1, np.float32))


def test_conv_output_size_rules():
    assert tc.conv_output_size(5, 3, 2, 1) == 3
    with pytest.raises(NonIntegralOutputSize):
        tc.conv_output_size(4, 3, 2, 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.just(1), st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_conv_unit_kernel_is_identity(x):
    out = tc.conv2d_forward(x, np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
    assert np.array_equal(out, x)


def _conv_reference(x, k, b, stride, pad):
    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    co, _, kh, _ = k.shape
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kh) // stride + 1
    out = np.zeros((co, ho, wo))
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kh]
                out[o, i, j] = (patch * k[o]).sum() + b[o]
    return out


def test_conv_matches_reference(rng):
    x = rng.standard_normal((3, 7, 7)).astype(np.float32)
    k = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    out = tc.conv2d_forward(x, k, b, stride=2, pad=1)
    np.testing.assert_allclose(out, _conv_reference(x, k, b, 2, 1), rtol=1e-5, atol=1e-5)


def test_helpers():
    assert tc.relu(np.array([-1.0, 2.0], np.float32)).tolist() == [0, 2]
    assert tc.batchnorm_apply(np.array([5.0], np.float32), [1.0], [0.0], [0.0], [1.0], eps=0.0).tolist() == [5.0]
    assert tc.global_avg_pool(np.array([[[1, 2], [3, 4]]], np.float32)).tolist() == [2.5]
    assert tc.flatten(np.arange(6).reshape(1, 2, 3)).tolist() == list(range(6))
    with pytest.raises(ShapeMismatch):
        tc.batchnorm_apply(np.ones(3), [1.0], [0.0], [0.0], [1.0])
    with pytest.raises(ShapeMismatch):
        tc.global_avg_pool(np.ones(3))


def test_rng_is_reproducible():
    a = tc.make_rng(7).standard_normal(5)
    b = tc.make_rng(7).standard_normal(5)
    assert a.tobytes() == b.tobytes()
    assert tc.make_rng(8).standard_normal(5).tobytes() != a.tobytes()


def test_as_array_rejects_non_finite():
    with pytest.raises(ValueError):
        tc.as_array([1.0, np.nan])
    with pytest.raises(ShapeMismatch):
        tc.as_array([])
