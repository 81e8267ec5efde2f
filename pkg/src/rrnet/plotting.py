"""Figures written next to the CSV reports (Agg backend, PNG)."""

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (np.sqrt(5) - 1.0) / 2.0
WIDTH = 5.0

STYLE = {
    "figure.figsize": (WIDTH, WIDTH * GOLDEN),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "svg.hashsalt": "rrnet",
}


@contextmanager
def style():
    with plt.rc_context(STYLE):
        yield


def figure_path(csv_path):
    """``report.csv`` -> ``report.png`` in the same directory."""
    return Path(csv_path).with_suffix(".png")


def _save(fig, path):
    # no Software/date metadata, so reruns give identical bytes
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def _stage_of(name):
    head = name.split(".", 1)[0]
    if head.startswith("stage") or head.startswith("cdc"):
        return "enc" + head.lstrip("stagecdc")
    return head.rstrip("0123456789") if head.startswith("head") else head


def plot_profile(report, path):
    """Params and MAdds per network section (encoder stage, decoder layer, head)."""
    groups = {}
    for rec in report.layers:
        key = _stage_of(rec.name)
        p, m = groups.get(key, (0, 0))
        groups[key] = (p + rec.params, m + rec.madds)
    labels = list(groups)
    params = np.array([groups[k][0] for k in labels]) / 1e3
    madds = np.array([groups[k][1] for k in labels]) / 1e6
    with style():
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(WIDTH, WIDTH * 0.8))
        x = np.arange(len(labels))
        a1.bar(x, params, color="#2b8cbe")
        a1.set_ylabel("params (K)")
        a2.bar(x, madds, color="#7bccc4")
        a2.set_ylabel("MAdds (M)")
        a2.set_xticks(x)
        a2.set_xticklabels(labels, rotation=45, ha="right")
        a1.set_title(f"total {report.params / 1e6:.3f}M params, {report.madds / 1e9:.3f}B MAdds")
        fig.tight_layout()
        return _save(fig, path)


def plot_loss(losses, path):
    with style():
        fig, ax = plt.subplots()
        steps = np.arange(1, len(losses) + 1)
        if len(losses):
            ax.plot(steps, losses, color="#08589e")
        ax.set_xlabel("step")
        ax.set_ylabel("mean absolute error")
        fig.tight_layout()
        return _save(fig, path)


def plot_metrics(named, aggregate, path):
    """Error metrics per file (left) and inlier ratios of the aggregate (right)."""
    with style():
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(WIDTH * 1.4, WIDTH * GOLDEN))
        names = [n for n, _ in named]
        x = np.arange(len(names))
        for i, (field, color) in enumerate([("abs_rel", "#2b8cbe"), ("rmse_log", "#7bccc4")]):
            a1.bar(x + (i - 0.5) * 0.4, [getattr(m, field) for _, m in named], 0.4,
                   label=field, color=color)
        a1.set_xticks(x)
        a1.set_xticklabels(names, rotation=45, ha="right")
        a1.legend(frameon=False)
        deltas = [aggregate.delta1, aggregate.delta2, aggregate.delta3]
        a2.bar(["d1", "d2", "d3"], deltas, color="#08589e")
        a2.set_ylim(0, 1)
        a2.set_ylabel("inlier ratio")
        fig.tight_layout()
        return _save(fig, path)


def plot_sweep(rows, path):
    with style():
        fig, a1 = plt.subplots()
        rs = [row.r for row in rows]
        a1.plot(rs, [row.params / 1e6 for row in rows], "o-", color="#2b8cbe", label="params (M)")
        a1.set_xlabel("r")
        a1.set_ylabel("params (M)")
        a2 = a1.twinx()
        a2.plot(rs, [row.madds / 1e9 for row in rows], "s--", color="#7bccc4", label="MAdds (B)")
        a2.set_ylabel("MAdds (B)")
        a1.set_xticks(rs)
        fig.tight_layout()
        return _save(fig, path)
