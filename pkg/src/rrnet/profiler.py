"""Static Params / MAdds / activation-memory accounting.

One multiply-accumulate counts as one MAdd; activations, interpolation and
bias additions are free. Counts are per forward pass at the given batch
size, with ``images`` scaling MAdds to a larger evaluation set.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .config import load_preset
from .graph import build, forward, infer_shapes
from .kernels import count_madds
from .tensor import Tensor

CSV_HEADER = ["layer", "type", "out_n", "out_c", "out_h", "out_w", "params", "madds", "act_bytes"]
SWEEP_INPUT = (1, 6, 256, 512)


@dataclass
class LayerRecord:
    name: str
    type: str
    out_shape: Tuple[int, int, int, int]
    params: int
    madds: int
    act_bytes: int


@dataclass
class ProfileReport:
    input_shape: Tuple[int, int, int, int]
    layers: List[LayerRecord] = field(default_factory=list)

    @property
    def params(self):
        return sum(r.params for r in self.layers)

    @property
    def madds(self):
        return sum(r.madds for r in self.layers)

    @property
    def act_bytes(self):
        return sum(r.act_bytes for r in self.layers)

    def by_prefix(self, prefix):
        return [r for r in self.layers if r.name.startswith(prefix)]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.layers:
            w.writerow([r.name, r.type, *r.out_shape, r.params, r.madds, r.act_bytes])
        w.writerow(["TOTAL", "", *self.input_shape, self.params, self.madds, self.act_bytes])
        return buf.getvalue()


def layer_cost(node, out_shape, count_bias=True):
    """(params, madds) of one node given its output shape."""
    n, _, h, w = out_shape
    bias = node.c_out if (node.bias and count_bias) else 0
    if node.op == "conv" or node.op == "pointwise":
        weights = node.k * node.k * node.c_in * node.c_out
        return weights + bias, weights * n * h * w
    if node.op == "depthwise":
        weights = node.k * node.k * node.c_out
        return weights + bias, weights * n * h * w
    return 0, 0


def profile(g, input_shape, count_bias=True, images=1, itemsize=4, include_input=False):
    """Per-layer and total complexity of ``g`` for one pass over ``input_shape``."""
    input_shape = tuple(int(v) for v in input_shape)
    shapes = infer_shapes(g, input_shape)
    report = ProfileReport(input_shape)
    for node in g.nodes:
        if node.op == "input" and not include_input:
            continue
        shape = shapes[node.name]
        params, madds = layer_cost(node, shape, count_bias)
        report.layers.append(LayerRecord(node.name, node.op, shape, params, madds * int(images),
                                         int(np.prod(shape)) * itemsize))
    return report


def brute_force_count(g, input_shape=None):
    """Independent (params, madds): enumerate stored weights, count executed MACs.

    Params is the element count of every stored weight tensor. MAdds is
    tallied by the convolution kernels themselves while running a forward
    pass on a zero input.
    """
    params = 0
    for t in g.weights.values():
        for _ in np.nditer(t.data):
            params += 1
    if input_shape is None:
        return params, 0
    x = Tensor(np.zeros(input_shape, dtype=g.dtype))
    with count_madds() as box:
        forward(g, x)
    return params, box[0]


@dataclass
class SweepRow:
    preset: str
    r: int
    params: int
    madds: int
    residual: int


def affine_fit(rs, values):
    """Exact integer fit ``values = a + b * r`` anchored at the first two points.

    Returns (a, b, residuals); a nonzero residual means the law is broken.
    """
    (r0, v0), (r1, v1) = (rs[0], values[0]), (rs[1], values[1])
    b, rem = divmod(v1 - v0, r1 - r0)
    if rem:
        b = (v1 - v0) / (r1 - r0)
    a = v0 - b * r0
    return a, b, [v - (a + b * r) for r, v in zip(rs, values)]


def profile_preset_sweep(presets=("rrnet-r1", "rrnet-r2", "rrnet-r3", "rrnet-r4"),
                         input_shape=SWEEP_INPUT, count_bias=True):
    """(r, params, madds) for each preset, ascending in r, with affine residuals."""
    rows = []
    for name in presets:
        spec = load_preset(name) if isinstance(name, str) else name
        rep = set(spec.repetitions)
        if len(rep) != 1:
            raise ValueError(f"preset {spec.name} mixes repetition counts {sorted(rep)}")
        report = profile(build(spec), input_shape, count_bias=count_bias)
        rows.append(SweepRow(spec.name, rep.pop(), report.params, report.madds, 0))
    rows.sort(key=lambda row: row.r)
    if len(rows) >= 2:
        _, _, res = affine_fit([row.r for row in rows], [row.params for row in rows])
        for row, e in zip(rows, res):
            row.residual = e
    return rows


def format_sweep(rows):
    lines = ["r,params,madds,params_M,madds_B,affine_residual"]
    for row in rows:
        lines.append(f"{row.r},{row.params},{row.madds},{row.params / 1e6:.2f}M,"
                     f"{row.madds / 1e9:.2f}B,{row.residual}")
    return "\n".join(lines) + "\n"
