"""RR block, condensed decoding connections, decoder up-scaling layer and head.

All units are functional: they read their weights from a flat name -> Tensor
mapping using the naming scheme of the RRWT container
(``stage{S}.rep{J}.{reduce|dw|pw}``, ``cdc{S}.reduce``, ``dec{L}.conv``,
``head.conv``, each with ``.weight`` and optional ``.bias`` entries).

Inside a stage every repetition runs at the stage's input resolution. When
the stage downsamples, the stride-2 depthwise convolution sits in the last
repetition, after its bottleneck has been taken, so all stacked bottlenecks
share one spatial size.
"""

import zlib
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import ops
from .errors import ShapeError
from .ops import ConvParams
from .tensor import Tensor

DOWNSAMPLE_MODES = ("stride", "maxpool", "none")


@dataclass
class RRBlockConfig:
    r: int = 4
    rr: int = 16
    re: int = 32
    dilation_base: int = 6
    dilation_step: Optional[int] = None
    downsample: str = "stride"

    def __post_init__(self):
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if self.rr < 1 or self.re < 1:
            raise ValueError("rr and re must be >= 1")
        if self.rr > self.re:
            raise ValueError(f"rr ({self.rr}) must not exceed re ({self.re})")
        if self.dilation_base < 1 or self.step < 1:
            raise ValueError("dilation base and step must be >= 1")
        if self.downsample not in DOWNSAMPLE_MODES:
            raise ValueError(f"downsample must be one of {DOWNSAMPLE_MODES}")

    @property
    def step(self):
        return self.dilation_base if self.dilation_step is None else self.dilation_step

    def dilation(self, j):
        """Atrous rate of repetition ``j`` (1-indexed)."""
        if not 1 <= j <= self.r:
            raise ValueError(f"repetition index {j} outside 1..{self.r}")
        return self.dilation_base + self.step * (j - 1)

    def unit_stride(self, j):
        return 2 if (self.downsample == "stride" and j == self.r) else 1

    def unit_in_channels(self, j, in_channels):
        return in_channels if j == 1 else self.re


@dataclass
class CDCStack:
    features: List[Tensor] = field(default_factory=list)
    reduced: Optional[Tensor] = None
    rcn: Optional[int] = None

    @property
    def stacked_channels(self):
        return sum(t.shape[1] for t in self.features)


# -- weight initialisation -------------------------------------------------

def he_tensor(name, shape, fan_in, seed, dtype):
    """He-normal tensor, std sqrt(2 / fan_in), whose stream depends only on (seed, name)."""
    rng = np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
    values = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return Tensor(values.astype(dtype), requires_grad=True, name=name)


def conv_weights(name, c_in, c_out, k, seed, dtype, bias=True, depthwise=False):
    shape = (c_out, 1, k, k) if depthwise else (c_out, c_in, k, k)
    fan_in = k * k if depthwise else c_in * k * k
    out = {f"{name}.weight": he_tensor(f"{name}.weight", shape, fan_in, seed, dtype)}
    if bias:
        out[f"{name}.bias"] = Tensor(np.zeros((1, c_out, 1, 1), dtype=dtype),
                                     requires_grad=True, name=f"{name}.bias")
    return out


def rr_block_weights(cfg, in_channels, stage, seed, dtype=np.float32, bias=True):
    w = {}
    for j in range(1, cfg.r + 1):
        base = f"stage{stage}.rep{j}"
        cin = cfg.unit_in_channels(j, in_channels)
        w.update(conv_weights(f"{base}.reduce", cin, cfg.rr, 1, seed, dtype, bias))
        w.update(conv_weights(f"{base}.dw", cfg.rr, cfg.rr, 3, seed, dtype, bias, depthwise=True))
        w.update(conv_weights(f"{base}.pw", cfg.rr, cfg.re, 1, seed, dtype, bias))
    return w


def params(weights, name, stride=1, dilation=1):
    return ConvParams(weights[f"{name}.weight"], weights.get(f"{name}.bias"),
                      stride=stride, dilation=dilation)


# -- forward units ---------------------------------------------------------

def rr_unit_forward(x, cfg, j, weights, stage=1, act="elu", in_channels=None):
    """One repetition: linear 1x1 reduction, then dilated depthwise separable expansion.

    Returns ``(bottleneck, expanded)``; the bottleneck is what the CDC stacks.
    """
    base = f"stage{stage}.rep{j}"
    reduce = params(weights, f"{base}.reduce")
    expected = in_channels if in_channels is not None else reduce.c_in
    if x.shape[1] != expected or x.shape[1] != reduce.c_in:
        raise ShapeError(f"{base}: input has {x.shape[1]} channels, unit expects {reduce.c_in}",
                         axis="c")
    activate = ops.activation(act)
    bottleneck = ops.pointwise_conv2d(x, reduce)
    dw = params(weights, f"{base}.dw", stride=cfg.unit_stride(j), dilation=cfg.dilation(j))
    h = activate(ops.depthwise_conv2d(bottleneck, dw))
    expanded = activate(ops.pointwise_conv2d(h, params(weights, f"{base}.pw")))
    return bottleneck, expanded


def rr_block_forward(x, cfg, weights, stage=1, act="elu"):
    """Apply ``cfg.r`` chained repetitions and collect their bottlenecks."""
    cdc = CDCStack()
    out = x
    for j in range(1, cfg.r + 1):
        bottleneck, out = rr_unit_forward(out, cfg, j, weights, stage, act)
        cdc.features.append(bottleneck)
    if cfg.downsample == "maxpool":
        out = ops.max_pool2(out)
    return out, cdc


def cdc_reduce(cdc, weights, stage=1):
    """Stack the bottlenecks and compress them with a linear 1x1 reduction."""
    if not cdc.features:
        raise ShapeError("CDC stack is empty")
    stacked = ops.concat_channels(cdc.features)
    p = params(weights, f"cdc{stage}.reduce")
    if stacked.shape[1] != p.c_in:
        raise ShapeError(f"cdc{stage}: {stacked.shape[1]} stacked channels, reduction expects {p.c_in}",
                         axis="c")
    cdc.reduced = ops.pointwise_conv2d(stacked, p)
    cdc.rcn = p.c_out
    return cdc.reduced


def decoder_upscale_layer(prev, skip, weights, name="dec1.conv", act="elu"):
    """Bilinear x2 upsample, concatenate the encoder tensor, 3x3 conv + activation."""
    up = ops.upsample_bilinear_x2(prev)
    if skip is not None:
        if skip.shape[0] != up.shape[0] or skip.shape[2:] != up.shape[2:]:
            raise ShapeError(
                f"{name}: upsampled tensor {up.shape} does not match skip tensor {skip.shape}",
                axis="h" if skip.shape[2] != up.shape[2] else "w")
        up = ops.concat_channels([up, skip])
    return ops.activation(act)(ops.conv2d(up, params(weights, name)))


def disparity_head(x, weights, name="head.conv", scale=0.3):
    """3x3 conv to one channel, squashed into (0, scale)."""
    return ops.scaled_sigmoid(ops.conv2d(x, params(weights, name)), scale)
