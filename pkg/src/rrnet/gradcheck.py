"""Finite-difference verification of the analytic gradients of a whole network.

The scalar probed is ``sum(forward(g, x) * R)`` for a fixed random weight
map ``R``. Unlike the absolute-error training loss it is smooth in every
weight, so central differences converge at their nominal O(eps^2) rate.

Analytic gradients come from the graph at its own precision. The difference
quotients are evaluated on an extended-precision copy of the same weights:
in plain double precision the rounding noise of a full forward pass
(~1e-14 absolute) divided by 2*eps would swamp small gradients at eps = 1e-6.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import ops
from .graph import NetworkGraph, build, forward, forward_all, forward_from
from .tensor import Tape, Tensor, backward

# Relative errors use max(|analytic|, |numeric|, FLOOR) as the denominator so
# weights whose true gradient is exactly zero do not divide by zero.
FLOOR = 1e-8


@dataclass
class GradSample:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self):
        scale = max(abs(self.analytic), abs(self.numeric), FLOOR)
        return abs(self.analytic - self.numeric) / scale


@dataclass
class GradcheckReport:
    samples: List[GradSample] = field(default_factory=list)
    cdc_stage1_norm: float = 0.0
    skip_stage1_norm: float = 0.0
    reduce_grads_nonzero: bool = False
    eps: float = 1e-6

    @property
    def max_rel_error(self):
        return max((s.rel_error for s in self.samples), default=0.0)

    def summary(self):
        return (f"samples={len(self.samples)} eps={self.eps:g} max_rel_error={self.max_rel_error:.3e}\n"
                f"stage1 grad norm: cdc={self.cdc_stage1_norm:.6e} skip={self.skip_stage1_norm:.6e}\n"
                f"all reduction units nonzero: {self.reduce_grads_nonzero}")


def probe_input(g, h=32, w=64, seed=0):
    rng = np.random.default_rng(seed)
    c = g.input_node.c_out
    x = rng.random((1, c, h, w))
    r = rng.standard_normal((1, 1, h, w))
    return x, r


def _perturbed_objective(g, base, name, r):
    vals = forward_from(g, base, [name.rsplit(".", 1)[0]])
    return (vals[g.output].data * r).sum()


def extended_copy(g):
    """Same nodes and weight values, evaluated in ``np.longdouble``."""
    weights = {k: Tensor(t.data.astype(np.longdouble)) for k, t in g.weights.items()}
    return NetworkGraph(list(g.nodes), weights, spec=g.spec, output=g.output)


def analytic_grads(g, x, r):
    """Gradient of the probe objective w.r.t. every weight (name -> array)."""
    g.zero_grad()
    with Tape() as tape:
        loss = ops.weighted_sum(forward(g, Tensor(x, dtype=g.dtype)), r)
    backward(loss, tape)
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in g.weights.items()}


def stage_norm(grads, stage=1):
    prefix = f"stage{stage}."
    return float(np.sqrt(sum(float((v.astype(np.float64) ** 2).sum())
                             for k, v in grads.items() if k.startswith(prefix))))


def gradcheck(g, sample_count=200, eps=1e-6, seed=0, h=32, w=64):
    """Compare analytic and central-difference gradients on random scalar weights.

    Also reports the stage-1 gradient norm of ``g`` and of its twin built in
    the other connection mode with the same seed and probe input.
    """
    rng = np.random.default_rng(seed)
    x, r = probe_input(g, h, w, seed)
    grads = analytic_grads(g, x, r)

    ext = extended_copy(g)
    base = forward_all(ext, Tensor(x, dtype=np.longdouble))
    names = sorted(g.weights)
    sizes = np.array([g.weights[k].data.size for k in names], dtype=np.float64)
    report = GradcheckReport(eps=eps)
    picks = rng.choice(len(names), size=sample_count, p=sizes / sizes.sum())
    for i in picks:
        name = names[i]
        t = ext.weights[name]
        idx = np.unravel_index(int(rng.integers(t.data.size)), t.shape)
        orig = t.data[idx]
        t.data[idx] = orig + eps
        up = _perturbed_objective(ext, base, name, r)
        t.data[idx] = orig - eps
        down = _perturbed_objective(ext, base, name, r)
        t.data[idx] = orig
        numeric = float((up - down) / (2 * np.longdouble(eps)))
        report.samples.append(GradSample(name, tuple(int(v) for v in idx),
                                         float(grads[name][idx]), numeric))

    reduce = [k for k in grads if ".rep" in k and ".reduce.weight" in k]
    report.reduce_grads_nonzero = bool(reduce) and all(np.any(grads[k] != 0) for k in reduce)

    if g.spec is not None:
        other = "skip" if g.spec.connection_mode == "cdc" else "cdc"
        twin = build(g.spec.with_connection(other), dtype=g.dtype)
        twin_grads = analytic_grads(twin, x, r)
        own, theirs = stage_norm(grads), stage_norm(twin_grads)
        if g.spec.connection_mode == "cdc":
            report.cdc_stage1_norm, report.skip_stage1_norm = own, theirs
        else:
            report.cdc_stage1_norm, report.skip_stage1_norm = theirs, own
    return report
