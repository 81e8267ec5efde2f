"""8-bit binary PGM (P5) and PPM (P6) images.

Arrays are (h, w, channels) uint8; grayscale images have one channel.
"""

from pathlib import Path

import numpy as np

from .errors import FormatError

_CHANNELS = {b"P5": 1, b"P6": 3}


def _header_tokens(data, count):
    """Split the first ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError("truncated header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after header")
    return tokens, pos + 1


def decode_pnm(data):
    if len(data) < 2 or data[:2] not in _CHANNELS:
        raise FormatError(f"not a binary PGM/PPM file (magic {data[:2]!r})")
    (magic, w, h, maxval), offset = _header_tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError("non-integer width, height or maxval") from None
    if w < 1 or h < 1:
        raise FormatError(f"invalid image size {w}x{h}")
    if not 1 <= maxval <= 255:
        raise FormatError(f"only 8-bit images are supported, maxval = {maxval}")
    c = _CHANNELS[magic]
    size = w * h * c
    raster = data[offset:offset + size]
    if len(raster) != size:
        raise FormatError(f"truncated raster: expected {size} bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, c).copy()


def read_image(path):
    return decode_pnm(Path(path).read_bytes())


def encode_pnm(img):
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise FormatError(f"expected (h, w), (h, w, 1) or (h, w, 3), got {img.shape}")
    if img.dtype != np.uint8:
        raise FormatError(f"expected uint8 pixels, got {img.dtype}")
    h, w, c = img.shape
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def write_image(path, img):
    Path(path).write_bytes(encode_pnm(img))


def to_unit(img):
    """uint8 (h, w, c) to float32 (3, h, w) in [0, 1]; gray is replicated to 3 channels."""
    x = img.astype(np.float32) / 255.0
    if x.shape[2] == 1:
        x = np.repeat(x, 3, axis=2)
    return x.transpose(2, 0, 1)


def resize_bilinear(x, h, w):
    """Resample (c, H, W) to (c, h, w) with pixel-centre aligned bilinear weights."""
    c, H, W = x.shape

    def axis_weights(src, dst):
        pos = np.clip((np.arange(dst) + 0.5) * src / dst - 0.5, 0, src - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, src - 1)
        m = np.zeros((dst, src))
        m[np.arange(dst), lo] += 1 - (pos - lo)
        m[np.arange(dst), hi] += pos - lo
        return m.astype(x.dtype)

    ah, aw = axis_weights(H, h), axis_weights(W, w)
    return np.matmul(np.matmul(ah, x), aw.T)


def disparity_to_gray(disp, scale=None):
    """Map a (h, w) disparity map linearly onto 0..255 (0 -> 0, ``scale`` -> 255).

    Without ``scale`` the map's own maximum is used.
    """
    d = np.asarray(disp, dtype=np.float64)
    top = float(d.max()) if scale is None else float(scale)
    if top <= 0:
        return np.zeros(d.shape, dtype=np.uint8)
    return np.clip(np.rint(d / top * 255.0), 0, 255).astype(np.uint8)
