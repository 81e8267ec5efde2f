"""Depth / disparity error metrics with validity masking."""

import csv
import io
from dataclasses import dataclass, fields

import numpy as np

from .errors import NumericError, ShapeError

THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)
CSV_HEADER = ["file", "abs_rel", "sq_rel", "rmse", "rmse_log", "d1", "d2", "d3", "valid_count"]


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    valid_count: int

    def values(self):
        return [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log,
                self.delta1, self.delta2, self.delta3]


def _array(t):
    return np.asarray(getattr(t, "data", t), dtype=np.float64)


def compute_metrics(pred, gt, min_valid=0.0, crop=None):
    """Seven standard metrics over pixels where ``gt > min_valid``.

    ``crop`` optionally restricts evaluation to rows ``[top, bottom)`` and
    columns ``[left, right)`` of the last two axes. rmse_log uses natural logs.
    """
    p, d = _array(pred), _array(gt)
    if p.shape != d.shape:
        raise ShapeError(f"prediction shape {p.shape} differs from ground truth {d.shape}")
    if crop is not None:
        top, bottom, left, right = crop
        p, d = p[..., top:bottom, left:right], d[..., top:bottom, left:right]
    mask = d > min_valid
    count = int(mask.sum())
    if count == 0:
        raise NumericError(f"no valid ground-truth pixels (gt > {min_valid})")
    p, d = p[mask], d[mask]
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise NumericError("prediction must be finite and positive at every valid pixel")
    diff = d - p
    ratio = np.maximum(d / p, p / d)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / d)),
        sq_rel=float(np.mean(diff ** 2 / d)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(d) - np.log(p)) ** 2))),
        delta1=float(np.mean(ratio < THRESHOLDS[0])),
        delta2=float(np.mean(ratio < THRESHOLDS[1])),
        delta3=float(np.mean(ratio < THRESHOLDS[2])),
        valid_count=count,
    )


def aggregate(metrics):
    """Valid-count-weighted mean of every field."""
    metrics = list(metrics)
    if not metrics:
        raise ValueError("cannot aggregate an empty metric list")
    if len(metrics) == 1:
        return metrics[0]
    w = np.array([m.valid_count for m in metrics], dtype=np.float64)
    vals = np.array([m.values() for m in metrics])
    mean = (vals * w[:, None]).sum(axis=0) / w.sum()
    names = [f.name for f in fields(DepthMetrics)][:-1]
    return DepthMetrics(**dict(zip(names, map(float, mean))), valid_count=int(w.sum()))


def _row(label, m):
    return [label] + [repr(float(v)) for v in m.values()] + [str(m.valid_count)]


def metrics_csv(named):
    """CSV text for ``[(file, DepthMetrics), ...]`` plus an AGGREGATE row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for name, m in named:
        writer.writerow(_row(name, m))
    writer.writerow(_row("AGGREGATE", aggregate(m for _, m in named)))
    return buf.getvalue()
