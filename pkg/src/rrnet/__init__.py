"""Repetition-Reduction blocks, condensed decoding connections and RRNet on numpy."""

from .config import GraphSpec, load_config, load_preset, parse_config
from .errors import ConfigError, FormatError, NumericError, RRNetError, ShapeError
from .graph import NetworkGraph, build, forward, train_step
from .metrics import DepthMetrics, aggregate, compute_metrics
from .profiler import brute_force_count, profile, profile_preset_sweep
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "GraphSpec", "load_config", "load_preset", "parse_config",
    "ConfigError", "FormatError", "NumericError", "RRNetError", "ShapeError",
    "NetworkGraph", "build", "forward", "train_step",
    "DepthMetrics", "aggregate", "compute_metrics",
    "brute_force_count", "profile", "profile_preset_sweep",
    "Tape", "Tensor", "backward",
]
