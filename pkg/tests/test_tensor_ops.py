import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rrnet import ops, parallel
from rrnet.errors import ShapeError
from rrnet.kernels import SAME, VALID, out_size
from rrnet.ops import ConvParams
from rrnet.tensor import Tape, Tensor, backward


def naive_conv(x, w, b=None, stride=1, dilation=1, padding=SAME, depthwise=False):
    """Direct loop cross-correlation, written independently of the kernels."""
    n, c, h, wd = x.shape
    cout, _, k, _ = w.shape
    span = dilation * (k - 1) + 1
    if padding == SAME:
        ho, wo = -(-h // stride), -(-wd // stride)
        ph = max((ho - 1) * stride + span - h, 0)
        pw = max((wo - 1) * stride + span - wd, 0)
        top, left = ph // 2, pw // 2
    else:
        ho, wo = (h - span) // stride + 1, (wd - span) // stride + 1
        top = left = 0
    y = np.zeros((n, cout, ho, wo))
    for b_ in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ky in range(k):
                        for kx in range(k):
                            yy = i * stride + ky * dilation - top
                            xx = j * stride + kx * dilation - left
                            if 0 <= yy < h and 0 <= xx < wd:
                                if depthwise:
                                    acc += w[o, 0, ky, kx] * x[b_, o, yy, xx]
                                else:
                                    acc += float(np.dot(w[o, :, ky, kx], x[b_, :, yy, xx]))
                    y[b_, o, i, j] = acc + (0.0 if b is None else b[o])
    return y


def conv_params(w, b=None, **kw):
    return ConvParams(Tensor(w, requires_grad=True), None if b is None else ops.bias_tensor(b, True), **kw)


# -- tensor ------------------------------------------------------------------

def test_tensor_rank_and_dims():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 0, 2, 2)))
    t = Tensor(np.ones((1, 2, 3, 4), dtype=int))
    assert t.shape == (1, 2, 3, 4) and t.dtype == np.float32 and t.data.size == 24
    assert Tensor(np.ones((1, 1, 1, 1))).dtype == np.float64


def test_backward_sum_gives_ones():
    x = Tensor(np.random.rand(1, 2, 3, 3), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum_all(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones_like(x.data))


def test_backward_pointwise_weight_grad_is_pixel_sum(rng):
    x = Tensor(rng.random((1, 3, 4, 5)))
    p = conv_params(rng.standard_normal((2, 3, 1, 1)))
    with Tape() as tape:
        loss = ops.sum_all(ops.pointwise_conv2d(x, p))
    backward(loss, tape)
    expected = np.broadcast_to(x.data.sum(axis=(0, 2, 3)), (2, 3))
    np.testing.assert_allclose(p.kernel.grad[:, :, 0, 0], expected, rtol=1e-5)


def test_backward_rejects_non_scalar_and_empty_tape():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ops.elu(x)
    with pytest.raises(ShapeError):
        backward(y, tape)
    with pytest.raises(ValueError):
        backward(Tensor(np.ones((1, 1, 1, 1))), Tape())


def test_no_recording_without_grad():
    x = Tensor(np.ones((1, 1, 2, 2)))
    with Tape() as tape:
        ops.elu(x)
    assert len(tape.records) == 0


# -- convolutions ----------------------------------------------------------

def test_conv_valid_all_ones_is_nine():
    y = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), conv_params(np.ones((1, 1, 3, 3)), padding=VALID))
    assert y.shape == (1, 1, 1, 1) and y.item() == 9.0


@pytest.mark.parametrize("stride,expected", [(1, (1, 4, 8, 8)), (2, (1, 4, 4, 4))])
def test_conv_same_shapes(stride, expected):
    y = ops.conv2d(Tensor(np.zeros((1, 3, 8, 8))), conv_params(np.zeros((4, 3, 3, 3)), stride=stride))
    assert y.shape == expected


def test_conv_valid_empty_output_raises():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), conv_params(np.zeros((1, 1, 3, 3)), padding=VALID))


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(ShapeError) as err:
        ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), conv_params(np.zeros((1, 3, 3, 3))))
    assert err.value.axis == "c"


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), cin=st.integers(1, 3), cout=st.integers(1, 3),
       k=st.sampled_from([1, 3]), stride=st.integers(1, 3), dilation=st.integers(1, 3),
       padding=st.sampled_from([SAME, VALID]), seed=st.integers(0, 2 ** 16))
def test_conv_matches_naive_oracle(h, w, cin, cout, k, stride, dilation, padding, seed):
    span = dilation * (k - 1) + 1
    if padding == VALID and (h < span or w < span):
        return
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, cin, h, w))
    wt = r.standard_normal((cout, cin, k, k))
    b = r.standard_normal(cout)
    y = ops.conv2d(Tensor(x, dtype=np.float64), ConvParams(Tensor(wt, dtype=np.float64),
                   Tensor(b.reshape(1, -1, 1, 1), dtype=np.float64), stride, dilation, padding))
    np.testing.assert_allclose(y.data, naive_conv(x, wt, b, stride, dilation, padding), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), c=st.integers(1, 4), stride=st.integers(1, 3),
       dilation=st.integers(1, 4), seed=st.integers(0, 2 ** 16))
def test_depthwise_matches_naive_oracle(h, w, c, stride, dilation, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((1, c, h, w))
    wt = r.standard_normal((c, 1, 3, 3))
    y = ops.depthwise_conv2d(Tensor(x, dtype=np.float64),
                             ConvParams(Tensor(wt, dtype=np.float64), stride=stride, dilation=dilation))
    np.testing.assert_allclose(y.data, naive_conv(x, wt, None, stride, dilation, depthwise=True), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(size=st.integers(1, 40), stride=st.integers(1, 4), dilation=st.integers(1, 6), k=st.sampled_from([1, 3]))
def test_same_shape_is_ceil_over_stride(size, stride, dilation, k):
    assert out_size(size, k, stride, dilation, SAME) == math.ceil(size / stride)
    x = Tensor(np.zeros((1, 2, size, size)))
    y = ops.depthwise_conv2d(x, conv_params(np.zeros((2, 1, k, k)), stride=stride, dilation=dilation))
    assert y.shape[2:] == (math.ceil(size / stride),) * 2


def test_depthwise_impulse_dilation_two():
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    y = ops.depthwise_conv2d(Tensor(x), conv_params(np.ones((1, 1, 3, 3)), dilation=2)).data[0, 0]
    expected = np.zeros((5, 5))
    for dy in (-2, 0, 2):
        for dx in (-2, 0, 2):
            expected[2 + dy, 2 + dx] = 1.0
    assert np.array_equal(y, expected)


@pytest.mark.parametrize("d", [1, 2, 3, 6])
def test_depthwise_impulse_support_on_multiples_of_dilation(d, rng):
    n = 4 * d + 1
    x = np.zeros((1, 1, n, n))
    x[0, 0, n // 2, n // 2] = 1.0
    w = rng.uniform(0.5, 1.5, (1, 1, 3, 3))
    y = ops.depthwise_conv2d(Tensor(x), conv_params(w, dilation=d)).data[0, 0]
    ys, xs = np.nonzero(y)
    assert len(ys) == 9
    assert np.all((ys - n // 2) % d == 0) and np.all((xs - n // 2) % d == 0)


def test_depthwise_identity_tap(rng):
    x = rng.random((1, 3, 6, 7)).astype(np.float32)
    w = np.zeros((3, 1, 3, 3))
    w[:, 0, 1, 1] = 1.0
    assert np.array_equal(ops.depthwise_conv2d(Tensor(x), conv_params(w)).data, x)


def test_depthwise_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.depthwise_conv2d(Tensor(np.zeros((1, 3, 4, 4))), conv_params(np.zeros((2, 1, 3, 3))))


def test_depthwise_keeps_dims_at_dilation_six():
    y = ops.depthwise_conv2d(Tensor(np.zeros((1, 16, 32, 64))), conv_params(np.zeros((16, 1, 3, 3)), dilation=6))
    assert y.shape == (1, 16, 32, 64)


def test_pointwise_example_and_identity(rng):
    x = Tensor(np.array([1.0, 2.0]).reshape(1, 2, 1, 1))
    y = ops.pointwise_conv2d(x, conv_params(np.array([0.5, 0.25]).reshape(1, 2, 1, 1)))
    assert y.item() == 1.0
    z = rng.random((1, 5, 3, 4)).astype(np.float32)
    ident = ops.pointwise_conv2d(Tensor(z), conv_params(np.eye(5).reshape(5, 5, 1, 1), np.zeros(5)))
    assert np.array_equal(ident.data, z)
    assert ops.pointwise_conv2d(Tensor(np.zeros((1, 768, 8, 16))),
                                conv_params(np.zeros((128, 768, 1, 1)))).shape == (1, 128, 8, 16)


def test_pointwise_rejects_3x3():
    with pytest.raises(ShapeError):
        ops.pointwise_conv2d(Tensor(np.zeros((1, 1, 3, 3))), conv_params(np.zeros((1, 1, 3, 3))))


def test_even_kernel_rejected():
    with pytest.raises(ShapeError):
        conv_params(np.zeros((1, 1, 2, 2)))


@settings(max_examples=30, deadline=None)
@given(cin=st.integers(2, 64), cout=st.integers(2, 64))
def test_depthwise_separable_parameter_saving(cin, cout):
    separable = 9 * cin + cin * cout
    assert separable < 9 * cin * cout


def test_pointwise_linearity_single_precision(rng):
    p = conv_params(rng.standard_normal((6, 10, 1, 1)).astype(np.float32), rng.standard_normal(6))
    for _ in range(20):
        a = rng.standard_normal((1, 10, 5, 5)).astype(np.float32)
        b = rng.standard_normal((1, 10, 5, 5)).astype(np.float32)
        f = lambda v: ops.pointwise_conv2d(Tensor(v), p).data
        np.testing.assert_allclose(f(a) + f(b) - f(np.zeros_like(a)), f(a + b), atol=1e-5)


# -- elementwise, resampling, concat ----------------------------------------

def test_elu_values():
    y = ops.elu(Tensor(np.array([0.0, 1.0, -1.0]).reshape(1, 3, 1, 1), dtype=np.float64)).data.ravel()
    assert y[0] == 0.0 and y[1] == 1.0
    assert abs(y[2] - (math.exp(-1) - 1)) < 1e-12 and abs(y[2] + 0.63212) < 1e-5


def test_upsample_corner_aligned():
    x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2), dtype=np.float64)
    y = ops.upsample_bilinear_x2(x).data[0, 0]
    assert y.shape == (4, 4)
    np.testing.assert_allclose(y[0], [0, 1 / 3, 2 / 3, 1], atol=1e-12)
    np.testing.assert_allclose(y[-1], [2, 7 / 3, 8 / 3, 3], atol=1e-12)
    np.testing.assert_allclose(y[:, 0], [0, 2 / 3, 4 / 3, 2], atol=1e-12)


def test_upsample_constant_and_single():
    c = ops.upsample_bilinear_x2(Tensor(np.full((1, 2, 3, 5), 4.0))).data
    assert c.shape == (1, 2, 6, 10) and np.all(c == 4.0)
    s = ops.upsample_bilinear_x2(Tensor(np.full((1, 1, 1, 1), 5.0))).data
    assert s.shape == (1, 1, 2, 2) and np.all(s == 5.0)


def test_concat_rules():
    a, b = Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.ones((1, 3, 4, 4)))
    y = ops.concat_channels([a, b])
    assert y.shape == (1, 5, 4, 4) and np.all(y.data[:, 2:] == 1)
    assert ops.concat_channels([Tensor(np.zeros((1, 128, 2, 2)))] * 6).shape[1] == 768
    assert ops.concat_channels([a]) is a
    with pytest.raises(ShapeError) as err:
        ops.concat_channels([a, Tensor(np.zeros((1, 1, 4, 5)))])
    assert "tensor 1" in str(err.value) and err.value.axis == "w"


def test_concat_backward_splits_gradient(rng):
    a = Tensor(rng.random((1, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.random((1, 3, 3, 3)), requires_grad=True)
    wts = rng.standard_normal((1, 5, 3, 3))
    with Tape() as tape:
        loss = ops.weighted_sum(ops.concat_channels([a, b]), wts)
    backward(loss, tape)
    np.testing.assert_allclose(a.grad, wts[:, :2], rtol=1e-6)
    np.testing.assert_allclose(b.grad, wts[:, 2:], rtol=1e-6)


def test_scaled_sigmoid_range_and_stability():
    y = ops.scaled_sigmoid(Tensor(np.array([-1e4, 0.0, 1e4]).reshape(1, 3, 1, 1))).data.ravel()
    assert y[0] >= 0 and y[2] <= 0.3 and abs(y[1] - 0.15) < 1e-7 and np.all(np.isfinite(y))


# -- finite differences per primitive ------------------------------------------

def _numeric_grad(f, arr, eps=1e-6):
    """Central differences of ``f`` w.r.t. ``arr``, evaluated in extended precision."""
    arr = arr.astype(np.longdouble)
    g = np.zeros(arr.shape)
    it = np.nditer(np.empty(arr.shape), flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        o = arr[i]
        arr[i] = o + eps
        up = f(arr)
        arr[i] = o - eps
        down = f(arr)
        arr[i] = o
        g[i] = float((up - down) / (2 * np.longdouble(eps)))
    return g


def _rel(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8))


PRIMITIVES = {
    "conv": lambda x, w: ops.conv2d(x, ConvParams(w, stride=1, dilation=2)),
    "conv_stride": lambda x, w: ops.conv2d(x, ConvParams(w, stride=2)),
    "depthwise": lambda x, w: ops.depthwise_conv2d(x, ConvParams(w, dilation=2)),
    "depthwise_stride": lambda x, w: ops.depthwise_conv2d(x, ConvParams(w, stride=2)),
    "pointwise": lambda x, w: ops.pointwise_conv2d(x, ConvParams(w)),
    "elu": lambda x, w: ops.elu(x),
    "relu": lambda x, w: ops.relu(x),
    "sigmoid": lambda x, w: ops.scaled_sigmoid(x),
    "upsample": lambda x, w: ops.upsample_bilinear_x2(x),
    "maxpool": lambda x, w: ops.max_pool2(x),
}
WEIGHT_SHAPES = {"conv": (2, 3, 3, 3), "conv_stride": (2, 3, 3, 3), "depthwise": (3, 1, 3, 3),
                 "depthwise_stride": (3, 1, 3, 3), "pointwise": (4, 3, 1, 1)}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_central_differences(name):
    r = np.random.default_rng(7)
    x = Tensor(r.standard_normal((1, 3, 6, 8)), requires_grad=True, dtype=np.float64)
    w = Tensor(r.standard_normal(WEIGHT_SHAPES.get(name, (1, 1, 1, 1))), requires_grad=True, dtype=np.float64)
    if name in ("relu", "maxpool"):
        # keep inputs away from kinks and ties so the difference quotient is exact
        x.data[:] = np.sign(x.data) * (0.1 + np.abs(x.data)) + r.permutation(x.data.size).reshape(x.shape) * 1e-3
    fn = PRIMITIVES[name]
    probe = r.standard_normal(fn(x, w).shape)
    with Tape() as tape:
        loss = ops.weighted_sum(fn(x, w), probe)
    backward(loss, tape)
    ext = lambda a: Tensor(a.astype(np.longdouble))
    x_obj = lambda a: (fn(ext(a), ext(w.data)).data * probe).sum()
    w_obj = lambda a: (fn(ext(x.data), ext(a)).data * probe).sum()
    assert _rel(x.grad, _numeric_grad(x_obj, x.data)) <= 1e-6
    if name in WEIGHT_SHAPES:
        assert _rel(w.grad, _numeric_grad(w_obj, w.data)) <= 1e-6


def test_mae_gradient_sign():
    p = Tensor(np.array([0.1, 0.3]).reshape(1, 1, 1, 2), requires_grad=True, dtype=np.float64)
    t = Tensor(np.array([0.2, 0.2]).reshape(1, 1, 1, 2), dtype=np.float64)
    with Tape() as tape:
        loss = ops.mean_abs_error(p, t)
    backward(loss, tape)
    assert abs(loss.item() - 0.1) < 1e-12
    np.testing.assert_allclose(p.grad.ravel(), [-0.5, 0.5])


# -- determinism --------------------------------------------------------------

@pytest.mark.parametrize("threads", [2, 3, 8])
def test_kernels_bitwise_identical_across_threads(threads, rng):
    x = Tensor(rng.standard_normal((2, 40, 17, 23)).astype(np.float32))
    dense = conv_params(rng.standard_normal((37, 40, 3, 3)).astype(np.float32), rng.standard_normal(37), dilation=2)
    dw = conv_params(rng.standard_normal((40, 1, 3, 3)).astype(np.float32), stride=2, dilation=3)

    def run():
        return ops.conv2d(x, dense).data.tobytes() + ops.depthwise_conv2d(x, dw).data.tobytes()

    parallel.set_threads(1)
    ref = run()
    parallel.set_threads(threads)
    assert run() == ref
    assert run() == ref


def test_set_threads_validation(monkeypatch):
    with pytest.raises(ValueError):
        parallel.set_threads(0)
    parallel.set_threads(None)
    monkeypatch.setenv("RRNET_THREADS", "3")
    assert parallel.get_threads() == 3
