"""Instantiate, run and train the RRNet encoder-decoder.

A :class:`NetworkGraph` is a topologically ordered list of primitive
:class:`LayerNode` objects plus a flat weight map. The interpreter in
:func:`forward` executes any such graph, which lets the profiler and the
test-suite work on hand-built graphs as well as on full RRNet instances.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import ops
from .blocks import conv_weights
from .config import GraphSpec
from .errors import ShapeError
from .kernels import out_size, SAME
from .tensor import Tape, Tensor, backward

CONV_OPS = ("conv", "depthwise", "pointwise")


@dataclass
class LayerNode:
    name: str
    op: str
    inputs: Tuple[str, ...] = ()
    c_in: int = 0
    c_out: int = 0
    k: int = 1
    stride: int = 1
    dilation: int = 1
    act: Optional[str] = None
    bias: bool = False

    @property
    def weight_names(self):
        if self.op not in CONV_OPS:
            return ()
        return (f"{self.name}.weight", f"{self.name}.bias") if self.bias else (f"{self.name}.weight",)


@dataclass
class NetworkGraph:
    nodes: List[LayerNode]
    weights: Dict[str, Tensor]
    spec: Optional[GraphSpec] = None
    output: Optional[str] = None
    _index: Dict[str, LayerNode] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {}
        for node in self.nodes:
            if node.name in self._index:
                raise ValueError(f"duplicate node name {node.name!r}")
            for src in node.inputs:
                if src not in self._index:
                    raise ValueError(f"node {node.name!r} consumes {src!r} before it is defined")
            self._index[node.name] = node
        if self.output is None and self.nodes:
            self.output = self.nodes[-1].name

    def node(self, name):
        return self._index[name]

    @property
    def input_node(self):
        return self.nodes[0] if self.nodes and self.nodes[0].op == "input" else None

    @property
    def edges(self):
        return [(src, n.name) for n in self.nodes for src in n.inputs]

    @property
    def dtype(self):
        for t in self.weights.values():
            return t.dtype
        return np.dtype(np.float32)

    def nodes_of(self, op):
        return [n for n in self.nodes if n.op == op]

    def weight_bytes(self):
        return b"".join(self.weights[k].data.tobytes() for k in sorted(self.weights))

    def zero_grad(self):
        for t in self.weights.values():
            t.grad = None


# -- construction ---------------------------------------------------------

def _conv_node(nodes, weights, name, op, src, c_in, c_out, k, spec, dtype, stride=1, dilation=1, act=None):
    nodes.append(LayerNode(name, op, (src,), c_in, c_out, k, stride, dilation, act, spec.bias))
    weights.update(conv_weights(name, c_in, c_out, k, spec.seed, dtype, spec.bias,
                                depthwise=(op == "depthwise")))
    return name


def build(spec, dtype=np.float32):
    """Build the encoder-decoder described by ``spec`` with seeded He initialisation.

    Decoder layer ``L`` (1 = deepest) upsamples the previous decoder output and
    concatenates the connection from encoder stage ``6 - L``: the CDC
    reduction output in ``cdc`` mode, the stage's last bottleneck in ``skip``
    mode.
    """
    spec.validate()
    act = spec.activation
    nodes = [LayerNode("input", "input", (), 0, spec.input_channels)]
    weights = {}
    prev, width = "input", spec.input_channels
    connections = {}
    for s, cfg in enumerate(spec.stage_configs, start=1):
        bottlenecks = []
        for j in range(1, cfg.r + 1):
            base = f"stage{s}.rep{j}"
            b = _conv_node(nodes, weights, f"{base}.reduce", "pointwise", prev, width, cfg.rr, 1, spec, dtype)
            bottlenecks.append(b)
            d = _conv_node(nodes, weights, f"{base}.dw", "depthwise", b, cfg.rr, cfg.rr, 3, spec, dtype,
                           stride=cfg.unit_stride(j), dilation=cfg.dilation(j), act=act)
            prev = _conv_node(nodes, weights, f"{base}.pw", "pointwise", d, cfg.rr, cfg.re, 1, spec, dtype,
                              act=act)
            width = cfg.re
        if cfg.downsample == "maxpool":
            nodes.append(LayerNode(f"stage{s}.pool", "maxpool", (prev,), width, width))
            prev = f"stage{s}.pool"
        if spec.connection_mode == "cdc":
            stacked = cfg.r * cfg.rr
            nodes.append(LayerNode(f"cdc{s}.concat", "concat", tuple(bottlenecks), stacked, stacked))
            rcn = spec.rcn_per_stage[s - 1]
            connections[s] = (_conv_node(nodes, weights, f"cdc{s}.reduce", "pointwise", f"cdc{s}.concat",
                                         stacked, rcn, 1, spec, dtype), rcn)
        else:
            connections[s] = (bottlenecks[-1], cfg.rr)

    n_dec = len(spec.decoder_widths)
    for L in range(1, n_dec + 1):
        up = f"dec{L}.up"
        nodes.append(LayerNode(up, "upsample", (prev,), width, width))
        skip, skip_width = connections.get(n_dec + 1 - L, (None, 0))
        src = up
        if skip is not None:
            src = f"dec{L}.concat"
            nodes.append(LayerNode(src, "concat", (up, skip), width + skip_width, width + skip_width))
        out_w = spec.decoder_widths[L - 1]
        prev = _conv_node(nodes, weights, f"dec{L}.conv", "conv", src, width + skip_width, out_w, 3,
                          spec, dtype, act=act)
        width = out_w
    _conv_node(nodes, weights, "head.conv", "conv", prev, width, 1, 3, spec, dtype, act="disp")
    g = NetworkGraph(nodes, weights, spec=spec, output="head.conv")
    check_channels(g)
    return g


def check_channels(g):
    """Verify that every edge carries the channel count its consumer expects."""
    widths = {}
    for node in g.nodes:
        if node.op == "input":
            widths[node.name] = node.c_out
            continue
        got = [widths[src] for src in node.inputs]
        total = sum(got) if node.op == "concat" else got[0]
        if node.op != "concat" and len(got) != 1:
            raise ShapeError(f"node {node.name!r} takes one input, got {len(got)}")
        if total != node.c_in:
            edge = " + ".join(f"{src}({w})" for src, w in zip(node.inputs, got))
            raise ShapeError(f"edge {edge} -> {node.name} carries {total} channels, "
                             f"node expects {node.c_in}", axis="c")
        if node.op in CONV_OPS:
            w = g.weights[f"{node.name}.weight"].shape
            expected = (node.c_out, 1 if node.op == "depthwise" else node.c_in, node.k, node.k)
            if w != expected:
                raise ShapeError(f"weight {node.name}.weight has shape {w}, expected {expected}")
        widths[node.name] = node.c_out
    return widths


def spatial_factor(g):
    """Divisor that input height and width must be a multiple of.

    This is the largest cumulative downscale along any path; upsampling
    halves the running scale of its branch.
    """
    scale = {}
    for node in g.nodes:
        if node.op == "input":
            scale[node.name] = Fraction(1)
            continue
        s = max(scale[src] for src in node.inputs)
        if node.op in CONV_OPS:
            s *= node.stride
        elif node.op == "maxpool":
            s *= 2
        elif node.op == "upsample":
            s /= 2
        scale[node.name] = s
    return max(1, math.ceil(max(scale.values(), default=1)))


def infer_shapes(g, input_shape):
    """Propagate an (n, c, h, w) input shape through ``g``; returns name -> shape."""
    n, c, h, w = input_shape
    shapes = {}
    for node in g.nodes:
        if node.op == "input":
            if c != node.c_out:
                raise ShapeError(f"input has {c} channels, graph expects {node.c_out}", axis="c")
            shapes[node.name] = (n, c, h, w)
            continue
        ins = [shapes[s] for s in node.inputs]
        _, _, ih, iw = ins[0]
        if node.op in CONV_OPS:
            oh = out_size(ih, node.k, node.stride, node.dilation, SAME)
            ow = out_size(iw, node.k, node.stride, node.dilation, SAME)
            shapes[node.name] = (n, node.c_out, oh, ow)
        elif node.op == "upsample":
            shapes[node.name] = (n, node.c_out, 2 * ih, 2 * iw)
        elif node.op == "maxpool":
            if ih % 2 or iw % 2:
                raise ShapeError(f"{node.name}: max pooling needs even dims, got {ih}x{iw}")
            shapes[node.name] = (n, node.c_out, ih // 2, iw // 2)
        elif node.op == "concat":
            for src, s in zip(node.inputs, ins):
                if s[2:] != (ih, iw):
                    raise ShapeError(f"{node.name}: input {src} has spatial dims {s[2:]}, "
                                     f"expected {(ih, iw)}", axis="h")
            shapes[node.name] = (n, node.c_out, ih, iw)
        else:
            raise ValueError(f"unknown op {node.op!r}")
    return shapes


# -- execution -------------------------------------------------------------

def _nearest(size, factor):
    lo = max(factor, size // factor * factor)
    return lo


def _check_input(g, x):
    factor = spatial_factor(g)
    _, c, h, w = x.shape
    inp = g.input_node
    if inp is not None and c != inp.c_out:
        raise ShapeError(f"input has {c} channels, graph expects {inp.c_out}", axis="c")
    if h % factor or w % factor:
        raise ShapeError(
            f"input spatial dims {h}x{w} must be divisible by {factor}; "
            f"nearest valid size is {_nearest(h, factor)}x{_nearest(w, factor)}",
            axis="h" if h % factor else "w")


def _run_node(node, vals, weights):
    if node.op in CONV_OPS:
        p = ops.ConvParams(weights[f"{node.name}.weight"], weights.get(f"{node.name}.bias"),
                           stride=node.stride, dilation=node.dilation)
        x = vals[node.inputs[0]]
        if node.op == "depthwise":
            y = ops.depthwise_conv2d(x, p)
        elif node.op == "pointwise":
            y = ops.pointwise_conv2d(x, p)
        else:
            y = ops.conv2d(x, p)
        if node.act == "disp":
            return ops.scaled_sigmoid(y)
        if node.act:
            return ops.activation(node.act)(y)
        return y
    if node.op == "upsample":
        return ops.upsample_bilinear_x2(vals[node.inputs[0]])
    if node.op == "maxpool":
        return ops.max_pool2(vals[node.inputs[0]])
    if node.op == "concat":
        return ops.concat_channels([vals[s] for s in node.inputs])
    raise ValueError(f"unknown op {node.op!r}")


def forward_all(g, x):
    """Run ``g`` on ``x`` and return every node's output by name."""
    _check_input(g, x)
    if x.dtype != g.dtype:
        x = Tensor(x.data.astype(g.dtype))
    vals = {}
    for node in g.nodes:
        vals[node.name] = x if node.op == "input" else _run_node(node, vals, g.weights)
    return vals


def forward_from(g, vals, changed):
    """Recompute only the nodes downstream of the nodes named in ``changed``.

    ``vals`` is a dict produced by :func:`forward_all`; a new dict is returned.
    """
    dirty = set(changed)
    out = dict(vals)
    for node in g.nodes:
        if node.op == "input":
            continue
        if node.name in dirty or any(src in dirty for src in node.inputs):
            dirty.add(node.name)
            out[node.name] = _run_node(node, out, g.weights)
    return out


def forward(g, x):
    """Disparity prediction (n, 1, h, w) for a full RRNet; any graph's output node otherwise."""
    return forward_all(g, x)[g.output]


def train_step(g, x, target, lr):
    """One full-batch gradient-descent step on mean absolute error; returns the loss."""
    if target.shape[1] != 1 or target.shape[0] != x.shape[0] or target.shape[2:] != x.shape[2:]:
        raise ShapeError(f"target shape {target.shape} does not match input {x.shape}; "
                         f"expected {(x.shape[0], 1) + x.shape[2:]}")
    g.zero_grad()
    target = Tensor(target.data.astype(g.dtype))
    with Tape() as tape:
        pred = forward(g, x)
        loss = ops.mean_abs_error(pred, target)
    value = loss.item()
    backward(loss, tape)
    if lr != 0:
        for t in g.weights.values():
            if t.grad is not None:
                t.data -= np.asarray(lr, dtype=t.dtype) * t.grad
    return value
