"""Differentiable primitives on :class:`~rrnet.tensor.Tensor`.

Every operator computes its forward value with :mod:`rrnet.kernels` and,
when a tape is active, records a closure for the reverse pass.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import ShapeError
from .kernels import SAME, VALID
from .tensor import Tensor, record


@dataclass
class ConvParams:
    """Weights and geometry of one convolution.

    ``kernel`` has shape (c_out, c_in, k, k); depthwise kernels use
    (c, 1, k, k). ``kernel`` and ``bias`` are tensors so they can carry
    gradients.
    """

    kernel: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    dilation: int = 1
    padding: str = SAME

    def __post_init__(self):
        k = self.kernel.shape[-1]
        if self.kernel.shape[-2] != k:
            raise ShapeError(f"kernels must be square, got {self.kernel.shape[2:]}", axis="k")
        if k % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {k}", axis="k")
        if self.stride < 1 or self.dilation < 1:
            raise ValueError("stride and dilation must be >= 1")
        if self.padding not in (SAME, VALID):
            raise ValueError(f"padding must be SAME or VALID, got {self.padding!r}")
        if self.bias is not None and self.bias.data.size != self.kernel.shape[0]:
            raise ShapeError(
                f"bias has {self.bias.data.size} entries for {self.kernel.shape[0]} output channels",
                axis="c")

    @property
    def k(self):
        return self.kernel.shape[-1]

    @property
    def c_out(self):
        return self.kernel.shape[0]

    @property
    def c_in(self):
        return self.kernel.shape[1]


def bias_tensor(values, requires_grad=False, dtype=None):
    values = np.asarray(values, dtype=dtype)
    return Tensor(values.reshape(1, -1, 1, 1), requires_grad=requires_grad, dtype=dtype)


def _bias_array(p):
    return None if p.bias is None else p.bias.data.reshape(-1)


def _inputs(x, p):
    return (x, p.kernel) if p.bias is None else (x, p.kernel, p.bias)


def _bias_grad(db, p):
    return db.reshape(p.bias.shape)


def conv2d(x, p):
    """Dense dilated cross-correlation."""
    if x.shape[1] != p.c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {p.c_in}", axis="c")
    y = kernels.conv2d_forward(x.data, p.kernel.data, _bias_array(p),
                               p.stride, p.dilation, p.padding)
    out = Tensor(y)

    def back(g):
        dx, dw, db = kernels.conv2d_backward(g, x.data, p.kernel.data, p.stride,
                                             p.dilation, p.padding, need_x=x.requires_grad)
        grads = [dx, dw]
        if p.bias is not None:
            grads.append(_bias_grad(db, p))
        return grads

    return record(_inputs(x, p), out, back)


def depthwise_conv2d(x, p):
    """Per-channel spatial convolution; ``p.dilation`` is the atrous rate."""
    if p.c_in != 1 or p.c_out != x.shape[1]:
        raise ShapeError(
            f"depthwise kernel {p.kernel.shape} does not match {x.shape[1]} input channels",
            axis="c")
    y = kernels.depthwise_forward(x.data, p.kernel.data, _bias_array(p),
                                  p.stride, p.dilation, p.padding)
    out = Tensor(y)

    def back(g):
        dx, dw, db = kernels.depthwise_backward(g, x.data, p.kernel.data, p.stride,
                                                p.dilation, p.padding, need_x=x.requires_grad)
        grads = [dx, dw]
        if p.bias is not None:
            grads.append(_bias_grad(db, p))
        return grads

    return record(_inputs(x, p), out, back)


def pointwise_conv2d(x, p):
    """Per-pixel linear map across channels (1x1 convolution, no activation)."""
    if p.k != 1 or p.dilation != 1:
        raise ShapeError(f"pointwise convolution needs a 1x1 kernel, got {p.k}x{p.k}", axis="k")
    return conv2d(x, p)


def elu(x):
    v = x.data
    y = np.where(v > 0, v, np.expm1(np.minimum(v, 0)))
    out = Tensor(y)

    def back(g):
        return [g * np.where(v > 0, 1.0, y + 1.0).astype(v.dtype)]

    return record((x,), out, back)


def relu(x):
    v = x.data
    out = Tensor(np.maximum(v, 0))

    def back(g):
        return [g * (v > 0).astype(v.dtype)]

    return record((x,), out, back)


ACTIVATIONS = {"elu": elu, "relu": relu}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def scaled_sigmoid(x, scale=0.3):
    s = np.exp(-np.logaddexp(0, -x.data))
    out = Tensor(scale * s)

    def back(g):
        return [g * (scale * s * (1.0 - s))]

    return record((x,), out, back)


def upsample_bilinear_x2(x):
    """Corner-aligned bilinear upsampling to twice the spatial size."""
    out = Tensor(kernels.upsample2x_forward(x.data))
    shape = x.shape

    def back(g):
        return [kernels.upsample2x_backward(g, shape)]

    return record((x,), out, back)


def max_pool2(x):
    y, idx = kernels.maxpool2_forward(x.data)
    out = Tensor(y)
    shape = x.shape

    def back(g):
        return [kernels.maxpool2_backward(g, idx, shape)]

    return record((x,), out, back)


def concat_channels(xs):
    """Concatenate along channels in list order."""
    xs = list(xs)
    if not xs:
        raise ShapeError("cannot concatenate an empty list")
    if len(xs) == 1:
        return xs[0]
    n, _, h, w = xs[0].shape
    for i, t in enumerate(xs[1:], start=1):
        tn, _, th, tw = t.shape
        if (tn, th, tw) != (n, h, w):
            axis = "n" if tn != n else ("h" if th != h else "w")
            raise ShapeError(
                f"tensor {i} has shape {t.shape}, incompatible with tensor 0 shape {xs[0].shape}",
                axis=axis)
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def back(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))]

    return record(xs, out, back)


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    out = Tensor(a.data + b.data)
    return record((a, b), out, lambda g: [g, g])


def sum_all(x):
    out = Tensor(np.array(x.data.sum(), dtype=x.dtype).reshape(1, 1, 1, 1))
    shape = x.shape

    def back(g):
        return [np.broadcast_to(g.reshape(1, 1, 1, 1), shape).copy()]

    return record((x,), out, back)


def weighted_sum(x, weights):
    """Scalar ``sum(x * weights)`` for a constant weight array."""
    weights = np.asarray(weights, dtype=x.dtype)
    out = Tensor(np.array((x.data * weights).sum(), dtype=x.dtype).reshape(1, 1, 1, 1))

    def back(g):
        return [g.reshape(1, 1, 1, 1) * weights]

    return record((x,), out, back)


def mean_abs_error(pred, target):
    """Scalar mean |pred - target|; the target carries no gradient."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred.data - target.data
    out = Tensor(np.array(np.abs(diff).mean(), dtype=pred.dtype).reshape(1, 1, 1, 1))
    size = diff.size

    def back(g):
        return [g.reshape(1, 1, 1, 1) * np.sign(diff) / size, None]

    return record((pred, target), out, back)
