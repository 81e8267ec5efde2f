"""Rank-4 tensors and the reverse-mode tape."""

import threading

import numpy as np

from .errors import ShapeError

DEFAULT_DTYPE = np.float32
# longdouble is only used by the finite-difference oracle in gradcheck.
FLOAT_DTYPES = (np.float32, np.float64, np.longdouble)


class Tensor:
    """An NCHW array with an optional gradient buffer.

    Values are treated as immutable once constructed; only ``grad`` changes,
    and only while a backward pass accumulates into it.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE if dtype is None else dtype)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank 4 (n, c, h, w), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"every dimension must be >= 1, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @classmethod
    def zeros(cls, shape, dtype=DEFAULT_DTYPE, requires_grad=False):
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape, dtype=DEFAULT_DTYPE, requires_grad=False):
        return cls(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


class Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; primitives executed inside the block record
    themselves whenever at least one input requires a gradient.
    """

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def backward(self, loss):
        backward(loss, self)


_local = threading.local()


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape():
    s = _stack()
    return s[-1] if s else None


def record(inputs, output, backward_fn):
    """Attach ``output`` to the active tape if any input needs a gradient.

    ``backward_fn(grad_out)`` returns one gradient (or None) per input.
    """
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return output
    output.requires_grad = True
    tape.records.append(Record(tuple(inputs), output, backward_fn))
    return output


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def backward(loss, tape):
    """Propagate d(loss)/d(.) to every tensor recorded on ``tape``."""
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"loss must have shape (1, 1, 1, 1), got {loss.shape}")
    if not tape.records:
        raise ValueError("tape is empty; run the forward pass inside the Tape block")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.records):
        g = rec.output.grad
        if g is None:
            continue
        grads = rec.backward(g)
        for t, gi in zip(rec.inputs, grads):
            if gi is not None and t.requires_grad:
                _accumulate(t, gi)
