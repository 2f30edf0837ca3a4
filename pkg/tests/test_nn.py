import math

import numpy as np
import pytest

from hpm.nn import (Conv2dLayer, LinearLayer, SgdMomentum, conv2d_backward, conv2d_forward, init_conv,
                    init_linear, linear_backward, linear_forward, relu_backward, relu_forward, sgd_step,
                    softmax_cross_entropy)
from hpm.tensor import Rng
from oracles import fd_check, naive_conv2d, naive_cross_entropy


def _conv(rng, c_in, c_out, k, stride, pad):
    w = rng.normal(0, 0.5, (c_out, c_in, k, k))
    b = rng.normal(0, 0.5, c_out)
    return Conv2dLayer(w, b, stride, pad)


def test_conv_identity_kernel():
    layer = Conv2dLayer(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(conv2d_forward(layer, x), x)


def test_conv_stride2_pad1_geometry():
    layer = init_conv(Rng(0), 1, 1, 3, stride=2, padding=1)
    assert conv2d_forward(layer, np.zeros((1, 1, 4, 4), np.float32)).shape == (1, 1, 2, 2)
    assert layer.output_size(384, 128) == (192, 64)


def test_conv_rejects_channel_mismatch():
    layer = init_conv(Rng(0), 3, 2, 3, padding=1)
    with pytest.raises(ValueError):
        conv2d_forward(layer, np.zeros((1, 2, 4, 4), np.float32))


def test_conv_matches_loops():
    rng = np.random.default_rng(0)
    for stride, pad, k in [(1, 0, 3), (1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)]:
        layer = _conv(rng, 3, 4, k, stride, pad)
        x = rng.normal(size=(2, 3, 7, 6))
        np.testing.assert_allclose(conv2d_forward(layer, x), naive_conv2d(x, layer.weight, layer.bias, stride, pad),
                                   rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0)])
def test_conv_gradients(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    layer = _conv(rng, 2, 3, 3, stride, pad)
    x = rng.normal(size=(2, 2, 6, 5))
    r = rng.normal(size=conv2d_forward(layer, x).shape)
    f = lambda: float((conv2d_forward(layer, x) * r).sum())
    gx, gw, gb = conv2d_backward(layer, x, r)
    for arr, grad in [(x, gx), (layer.weight, gw), (layer.bias, gb)]:
        checked, _, bad = fd_check(f, arr, grad, rtol=1e-3)
        assert checked == arr.size and not bad


def test_relu():
    np.testing.assert_array_equal(relu_forward(np.float32([-1, 0, 2])), [0, 0, 2])
    np.testing.assert_array_equal(relu_backward(np.float32([-1, 0, 2]), np.float32([5, 5, 5])), [0, 0, 5])


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 0.01] = 0.5
    r = rng.normal(size=x.shape)
    f = lambda: float((relu_forward(x) * r).sum())
    state = lambda: x > 0
    _, _, bad = fd_check(f, x, relu_backward(x, r), rtol=1e-3, state=state)
    assert not bad


def test_linear_forward_and_gradients():
    layer = LinearLayer(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_allclose(linear_forward(layer, np.array([[1.0, 1.0]])), [[3.0, 7.0]])
    rng = np.random.default_rng(2)
    layer = LinearLayer(rng.normal(size=(5, 4)))
    h = rng.normal(size=(3, 4))
    r = rng.normal(size=(3, 5))
    f = lambda: float((linear_forward(layer, h) * r).sum())
    gh, gw = linear_backward(layer, h, r)
    for arr, grad in [(h, gh), (layer.weight, gw)]:
        assert not fd_check(f, arr, grad, rtol=1e-3)[2]


def test_linear_rejects_bad_dim():
    with pytest.raises(ValueError):
        linear_forward(LinearLayer(np.zeros((2, 3))), np.zeros((1, 4)))


def test_softmax_cross_entropy_examples():
    loss, grad = softmax_cross_entropy(np.array([0.0, 0.0]), 0)
    assert abs(loss - math.log(2)) < 1e-12
    np.testing.assert_allclose(grad, [-0.5, 0.5])
    loss, grad = softmax_cross_entropy(np.array([10.0, -10.0]), 0)
    # log(1 + e^-20) ~ 2.06e-9
    assert abs(loss - math.log1p(math.exp(-20))) < 1e-15
    assert loss > 0
    assert abs(grad[0] + math.exp(-20) / (1 + math.exp(-20))) < 1e-20
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros(3), 3)


def test_softmax_cross_entropy_matches_naive_and_fd():
    rng = np.random.default_rng(3)
    z = rng.normal(0, 3, size=(4, 6))
    labels = np.array([0, 5, 2, 2])
    loss, grad = softmax_cross_entropy(z, labels)
    for n in range(4):
        assert abs(loss[n] - naive_cross_entropy(z[n], labels[n])) < 1e-12
    f = lambda: float(softmax_cross_entropy(z, labels)[0].sum())
    assert not fd_check(f, z, grad, rtol=1e-3)[2]
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-12)


def test_softmax_large_logits_finite():
    loss, grad = softmax_cross_entropy(np.float32([1000, -1000, 0]), 1)
    assert np.isfinite(loss) and np.isfinite(grad).all()
    assert abs(loss - 2000) < 1e-3


def test_init_ranges():
    layer = init_conv(Rng(0), 4, 8, 3)
    a = math.sqrt(1 / 36)
    assert np.abs(layer.weight).max() <= a and not layer.bias.any()
    fc = init_linear(Rng(0), 16, 5)
    assert fc.weight.shape == (5, 16) and np.abs(fc.weight).max() <= 0.25
    with pytest.raises(ValueError):
        init_linear(Rng(0), 16, 1)


def test_sgd_momentum_recurrence():
    p = np.array([1.0])
    opt = SgdMomentum(base_lr=0.1, momentum=0.9)
    sgd_step(opt, {"w": p}, {"w": np.array([1.0])}, 0)
    assert abs(p[0] - 0.9) < 1e-12
    sgd_step(opt, {"w": p}, {"w": np.array([1.0])}, 0)
    # v = 0.9 * 1 + 1 = 1.9, p = 0.9 - 0.19
    assert abs(p[0] - 0.71) < 1e-12
    assert abs(p[0] - 1.0 + 0.29) < 1e-12


def test_sgd_lr_decay_and_multiplier():
    opt = SgdMomentum(base_lr=0.1, momentum=0.0, decay_epoch=40, lr_mult={"b": 0.5})
    assert opt.lr_at(39) == 0.1 and abs(opt.lr_at(40) - 0.01) < 1e-15
    a, b = np.array([0.0]), np.array([0.0])
    sgd_step(opt, {"a": a, "b": b}, {"a": np.array([1.0]), "b": np.array([1.0])}, 0)
    assert abs(a[0] + 0.1) < 1e-15 and abs(b[0] + 0.05) < 1e-15


def test_sgd_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step(SgdMomentum(0.1), {"w": np.zeros(2)}, {"w": np.zeros(3)}, 0)
