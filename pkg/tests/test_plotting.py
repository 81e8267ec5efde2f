from rrnet.graph import build
from rrnet.metrics import aggregate, compute_metrics
from rrnet.plotting import figure_path, plot_loss, plot_metrics, plot_profile, plot_sweep
from rrnet.profiler import profile, profile_preset_sweep

import numpy as np

from conftest import tiny_spec

PNG = b"\x89PNG\r\n\x1a\n"


def test_figure_path():
    assert str(figure_path("out/report.csv")) == "out/report.png"


def test_figures_are_png_and_reproducible(tmp_path):
    rep = profile(build(tiny_spec()), (1, 6, 32, 32))
    m = compute_metrics(np.array([1.0, 2.0]), np.array([2.0, 4.0]))
    jobs = [
        (plot_profile, (rep,)),
        (plot_loss, ([0.3, 0.2, 0.1],)),
        (plot_loss, ([],)),
        (plot_metrics, ([("a", m), ("b", m)], aggregate([m, m]))),
        (plot_sweep, (profile_preset_sweep(),)),
    ]
    for i, (fn, args) in enumerate(jobs):
        a, b = tmp_path / f"{i}a.png", tmp_path / f"{i}b.png"
        fn(*args, a)
        fn(*args, b)
        assert a.read_bytes().startswith(PNG)
        assert a.read_bytes() == b.read_bytes()
