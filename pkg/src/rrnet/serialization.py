"""RRTN tensor files and RRWT weight containers.

RRTN layout (little-endian)::

    b"RRTN" | u32 version=1 | u8 dtype (0=f32, 1=f64) | u8 rank=4 | 4 x u64 dims | payload

RRWT layout::

    b"RRWT" | u32 version=1 | u32 count | count x (u16 name_len | utf-8 name | RRTN record)
"""

import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor

TENSOR_MAGIC = b"RRTN"
WEIGHTS_MAGIC = b"RRWT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_HEADER = struct.Struct("<4sIBB4Q")


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def encode_tensor(t):
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if data.ndim != 4:
        raise FormatError(f"RRTN stores rank-4 tensors, got shape {data.shape}")
    code = _CODES.get(data.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {data.dtype}")
    header = _HEADER.pack(TENSOR_MAGIC, VERSION, code, 4, *data.shape)
    return header + np.ascontiguousarray(data, dtype=_DTYPES[code]).tobytes()


def decode_tensor(f):
    """Read one RRTN record from a binary stream."""
    raw = _read_exact(f, _HEADER.size, "RRTN header")
    magic, version, code, rank, *dims = _HEADER.unpack(raw)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported RRTN version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if rank != 4:
        raise FormatError(f"RRTN rank must be 4, got {rank}")
    if min(dims) < 1:
        raise FormatError(f"invalid dims {dims}")
    dtype = _DTYPES[code]
    count = int(np.prod(dims))
    payload = _read_exact(f, count * dtype.itemsize, "RRTN payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return Tensor(arr.astype(dtype.newbyteorder("="), copy=True))


def write_tensor(path, t):
    Path(path).write_bytes(encode_tensor(t))


def read_tensor(path):
    with open(path, "rb") as f:
        t = decode_tensor(f)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after RRTN payload")
    return t


def encode_weights(weights):
    """Serialise a name -> Tensor map; records are written in sorted name order."""
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC + struct.pack("<II", VERSION, len(weights)))
    for name in sorted(weights):
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"weight name too long: {name[:40]}...")
        out.write(struct.pack("<H", len(raw)) + raw)
        out.write(encode_tensor(weights[name]))
    return out.getvalue()


def decode_weights(f):
    magic = _read_exact(f, 4, "RRWT magic")
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
    version, count = struct.unpack("<II", _read_exact(f, 8, "RRWT header"))
    if version != VERSION:
        raise FormatError(f"unsupported RRWT version {version}")
    weights = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
        try:
            name = _read_exact(f, n, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"weight name is not valid UTF-8: {exc}") from None
        if name in weights:
            raise FormatError(f"duplicate weight {name!r}")
        weights[name] = decode_tensor(f)
    return weights


def save_weights(path, weights):
    Path(path).write_bytes(encode_weights(weights))


def load_weights(path):
    with open(path, "rb") as f:
        w = decode_weights(f)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after RRWT records")
    return w


def assign_weights(g, weights):
    """Copy loaded tensors into a built graph, checking names and shapes."""
    missing = sorted(set(g.weights) - set(weights))
    extra = sorted(set(weights) - set(g.weights))
    if missing or extra:
        raise FormatError(f"weight names differ from graph: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, t in weights.items():
        dst = g.weights[name]
        if dst.shape != t.shape:
            raise FormatError(f"{name}: file shape {t.shape}, graph shape {dst.shape}")
        dst.data = t.data.astype(dst.dtype)
    return g
