"""Raw numpy forward/backward kernels on NCHW arrays.

Dense convolutions are one matrix product over an im2col buffer; depthwise
convolutions accumulate one kernel tap at a time in a fixed (ky, kx) order.
Workers own disjoint output-channel slices, so no output element is ever
reduced across workers.

The kernels also feed an optional multiply-accumulate counter used by the
profiler's brute-force oracle: every executed tap reports the number of
multiplications it actually performed.
"""

import math
import threading
from contextlib import contextmanager

import numpy as np

from .errors import ShapeError
from .parallel import run_chunked

SAME = "SAME"
VALID = "VALID"

_counter = threading.local()


@contextmanager
def count_madds():
    """Count multiply-accumulates executed by forward kernels in this block.

    Yields a one-element list whose entry holds the running total.
    """
    box = [0]
    prev = getattr(_counter, "box", None)
    _counter.box = box
    try:
        yield box
    finally:
        _counter.box = prev


def _tick(n):
    box = getattr(_counter, "box", None)
    if box is not None:
        box[0] += int(n)


def out_size(size, k, stride, dilation, padding):
    span = (k - 1) * dilation + 1
    if padding == SAME:
        return -(-size // stride)
    if padding == VALID:
        return (size - span) // stride + 1 if size >= span else 0
    raise ValueError(f"unknown padding mode {padding!r}")


def pad_amounts(size, k, stride, dilation, padding):
    """(before, after) zero padding; the extra pixel goes after when odd."""
    if padding == VALID:
        return 0, 0
    span = (k - 1) * dilation + 1
    out = out_size(size, k, stride, dilation, padding)
    total = max((out - 1) * stride + span - size, 0)
    return total // 2, total - total // 2


def _geometry(x_shape, k, stride, dilation, padding):
    n, c, h, w = x_shape
    ho = out_size(h, k, stride, dilation, padding)
    wo = out_size(w, k, stride, dilation, padding)
    if ho <= 0 or wo <= 0:
        axis = "h" if ho <= 0 else "w"
        raise ShapeError(
            f"VALID convolution with kernel {k} dilation {dilation} produces empty "
            f"output for input {h}x{w}", axis=axis)
    ph = pad_amounts(h, k, stride, dilation, padding)
    pw = pad_amounts(w, k, stride, dilation, padding)
    return ho, wo, ph, pw


def _pad(x, ph, pw):
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), (0, 0), ph, pw))


def _tap(xp, ky, kx, dilation, stride, ho, wo):
    y0, x0 = ky * dilation, kx * dilation
    return xp[:, :, y0:y0 + stride * (ho - 1) + 1:stride,
              x0:x0 + stride * (wo - 1) + 1:stride]


def _columns(x, k, stride, dilation, ho, wo, ph, pw):
    """im2col matrix of shape (k*k*c_in, n*ho*wo), rows ordered (ky, kx, c_in)."""
    n, cin = x.shape[:2]
    xt = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
    if k == 1 and stride == 1:
        return xt.reshape(cin, n * ho * wo)
    xp = _pad(xt, ph, pw)
    col = np.empty((k * k, cin, n, ho, wo), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            col[ky * k + kx] = _tap(xp, ky, kx, dilation, stride, ho, wo)
    return col.reshape(k * k * cin, n * ho * wo)


def _weight_matrix(w):
    cout, cin, k, _ = w.shape
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(cout, k * k * cin)


def conv2d_forward(x, w, b, stride=1, dilation=1, padding=SAME):
    n = x.shape[0]
    cout, cin, k, _ = w.shape
    ho, wo, ph, pw = _geometry(x.shape, k, stride, dilation, padding)
    col = _columns(x, k, stride, dilation, ho, wo, ph, pw)
    wm = _weight_matrix(w)
    out = np.empty((cout, col.shape[1]), dtype=x.dtype)

    def work(o0, o1):
        np.matmul(wm[o0:o1], col, out=out[o0:o1])

    run_chunked(work, cout)
    _tick(wm.shape[0] * wm.shape[1] * col.shape[1])
    out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.reshape(1, cout, 1, 1)
    return np.ascontiguousarray(out)


def conv2d_backward(gy, x, w, stride=1, dilation=1, padding=SAME, need_x=True):
    """Return (dx, dw, db) for a dense convolution."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho, wo, ph, pw = _geometry(x.shape, k, stride, dilation, padding)
    col = _columns(x, k, stride, dilation, ho, wo, ph, pw)
    g = np.ascontiguousarray(gy.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
    dw = (g @ col.T).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
    db = g.sum(axis=1)
    dx = None
    if need_x:
        dcol = (_weight_matrix(w).T @ g).reshape(k * k, cin, n, ho, wo)
        if k == 1 and stride == 1:
            dx = dcol[0].transpose(1, 0, 2, 3)
        else:
            dxp = np.zeros((cin, n, h + sum(ph), wd + sum(pw)), dtype=x.dtype)
            for ky in range(k):
                for kx in range(k):
                    y0, x0 = ky * dilation, kx * dilation
                    dxp[:, :, y0:y0 + stride * (ho - 1) + 1:stride,
                        x0:x0 + stride * (wo - 1) + 1:stride] += dcol[ky * k + kx]
            dx = dxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + wd].transpose(1, 0, 2, 3)
        dx = np.ascontiguousarray(dx)
    return dx, np.ascontiguousarray(dw), db


def depthwise_forward(x, w, b, stride=1, dilation=1, padding=SAME):
    n, c, h, wd = x.shape
    k = w.shape[-1]
    ho, wo, ph, pw = _geometry(x.shape, k, stride, dilation, padding)
    xp = _pad(x, ph, pw)
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)

    def work(c0, c1):
        acc = out[:, c0:c1]
        for ky in range(k):
            for kx in range(k):
                tap = w[c0:c1, 0, ky, kx].reshape(1, -1, 1, 1)
                acc += tap * _tap(xp[:, c0:c1], ky, kx, dilation, stride, ho, wo)

    run_chunked(work, c)
    _tick(k * k * c * n * ho * wo)
    if b is not None:
        out += b.reshape(1, c, 1, 1)
    return out


def depthwise_backward(gy, x, w, stride=1, dilation=1, padding=SAME, need_x=True):
    n, c, h, wd = x.shape
    k = w.shape[-1]
    ho, wo, ph, pw = _geometry(x.shape, k, stride, dilation, padding)
    xp = _pad(x, ph, pw)
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp) if need_x else None
    for ky in range(k):
        for kx in range(k):
            xs = _tap(xp, ky, kx, dilation, stride, ho, wo)
            dw[:, 0, ky, kx] = (gy * xs).sum(axis=(0, 2, 3))
            if need_x:
                y0, x0 = ky * dilation, kx * dilation
                dxp[:, :, y0:y0 + stride * (ho - 1) + 1:stride,
                    x0:x0 + stride * (wo - 1) + 1:stride] += w[:, 0, ky, kx].reshape(1, c, 1, 1) * gy
    db = gy.sum(axis=(0, 2, 3))
    dx = None
    if need_x:
        dx = dxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + wd]
    return dx, dw, db


def interp_matrix(size, dtype):
    """Corner-aligned linear interpolation matrix mapping ``size`` to ``2*size`` samples."""
    out = 2 * size
    m = np.zeros((out, size), dtype=np.float64)
    if size == 1:
        m[:, 0] = 1.0
        return m.astype(dtype)
    scale = (size - 1) / (out - 1)
    for i in range(out):
        src = i * scale
        lo = min(int(math.floor(src)), size - 2)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, lo + 1] += frac
    return m.astype(dtype)


def upsample2x_forward(x):
    n, c, h, w = x.shape
    ah = interp_matrix(h, x.dtype)
    aw = interp_matrix(w, x.dtype)
    return np.matmul(np.matmul(ah, x), aw.T)


def upsample2x_backward(gy, in_shape):
    n, c, h, w = in_shape
    ah = interp_matrix(h, gy.dtype)
    aw = interp_matrix(w, gy.dtype)
    return np.matmul(np.matmul(ah.T, gy), aw)


def maxpool2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 max pooling needs even spatial dims, got {h}x{w}",
                         axis="h" if h % 2 else "w")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(gy, idx, in_shape):
    n, c, h, w = in_shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=gy.dtype)
    np.put_along_axis(blocks, idx[..., None], gy[..., None], axis=-1)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return blocks.reshape(n, c, h, w)
