"""``rrnet`` command-line front end.

Exit codes: 0 success, 1 usage (bad flags, incompatible shapes), 2 parse
(config or binary file contents), 3 I/O, 4 numeric. Every command reads and
validates all of its inputs before writing any output.
"""

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import parallel
from .config import load_config
from .data import load_dataset
from .errors import ConfigError, FormatError, NumericError, RRNetError, ShapeError
from .gradcheck import gradcheck
from .graph import build, forward, spatial_factor, train_step
from .imageio import disparity_to_gray, read_image, resize_bilinear, to_unit, write_image
from .metrics import aggregate, compute_metrics, metrics_csv
from .plotting import figure_path, plot_loss, plot_metrics, plot_profile
from .profiler import format_sweep, profile, profile_preset_sweep
from .serialization import assign_weights, load_weights, read_tensor, save_weights, write_tensor
from .tensor import Tensor

EXIT_USAGE, EXIT_PARSE, EXIT_IO, EXIT_NUMERIC = 1, 2, 3, 4
GRADCHECK_TOL = 1e-6
DISPARITY_MAX = 0.3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _finite(text):
    v = float(text)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {text}")
    return v


def _shape(text):
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        dims = ()
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected NxCxHxW with positive dims, got {text!r}")
    return dims


def _crop(text):
    try:
        vals = tuple(int(p) for p in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 4 or min(vals) < 0 or vals[0] >= vals[1] or vals[2] >= vals[3]:
        raise argparse.ArgumentTypeError(f"expected top,bottom,left,right with top<bottom, left<right, got {text!r}")
    return vals


def make_parser():
    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS,
                         help="worker cap for the convolution kernels (default: RRNET_THREADS or 1)")
    p = _Parser(prog="rrnet", parents=[threads],
                description="RR blocks, condensed decoding connections and the RRNet encoder-decoder.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build", parents=[threads], help="initialise weights and save an RRWT file")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--seed", type=_u64)

    s = sub.add_parser("profile", parents=[threads], help="params / MAdds / activation memory")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--input", type=_shape)
    s.add_argument("--csv")
    s.add_argument("--images", type=_positive_int, default=1)

    s = sub.add_parser("infer", parents=[threads], help="predict disparity for an image pair")
    s.add_argument("-m", "--model", required=True)
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--left", required=True)
    s.add_argument("--right")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--png-out")
    s.add_argument("--resize", action="store_true")

    s = sub.add_parser("gradcheck", parents=[threads], help="finite-difference gradient verification")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--samples", type=_positive_int, default=200)
    s.add_argument("--eps", type=_finite, default=1e-6)
    s.add_argument("--seed", type=_u64, default=0)

    s = sub.add_parser("train-toy", parents=[threads], help="plain SGD on mean absolute error")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--steps", type=_nonneg_int, required=True)
    s.add_argument("--lr", type=_finite, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log", required=True)

    s = sub.add_parser("eval", parents=[threads], help="depth metrics of predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--min-valid", type=_finite, default=0.0)
    s.add_argument("--crop", type=_crop)
    s.add_argument("--csv", required=True)

    sub.add_parser("sweep", parents=[threads], help="params / MAdds of rrnet-r1..r4 at 1x6x256x512")
    return p


# -- helpers -----------------------------------------------------------------

def _writable(*paths):
    for path in paths:
        if path is None:
            continue
        parent = Path(path).resolve().parent
        if not parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {parent}")
        if Path(path).is_dir():
            raise IsADirectoryError(f"output path is a directory: {path}")


def _model(config, seed=None, dtype=np.float32):
    spec = load_config(config)
    if seed is not None:
        spec = replace(spec, seed=seed)
    return build(spec, dtype=dtype)


def _write_text(path, text):
    Path(path).write_text(text, encoding="utf-8", newline="")


# -- commands ----------------------------------------------------------------

def cmd_build(args):
    g = _model(args.config, args.seed)
    _writable(args.out)
    save_weights(args.out, g.weights)
    spec = g.spec
    print(f"{spec.name}: input {spec.input_channels}ch, {spec.connection_mode} connections, seed {spec.seed}")
    for s, cfg in enumerate(spec.stage_configs, start=1):
        dil = ",".join(str(cfg.dilation(j)) for j in range(1, cfg.r + 1))
        print(f"  stage{s}: r={cfg.r} rr={cfg.rr} re={cfg.re} dilations={dil} downsample={cfg.downsample}")
    print(f"  decoder widths {','.join(map(str, spec.decoder_widths))}")
    print(f"wrote {len(g.weights)} tensors to {args.out}")
    return 0


def cmd_profile(args):
    g = _model(args.config)
    shape = args.input or (1, g.spec.input_channels, 256, 512)
    report = profile(g, shape, images=args.images)
    if args.csv:
        _writable(args.csv)
        _write_text(args.csv, report.to_csv())
        plot_profile(report, figure_path(args.csv))
    n, c, h, w = shape
    print(f"{g.spec.name} @ {n}x{c}x{h}x{w}: params {report.params} ({report.params / 1e6:.3f}M), "
          f"madds {report.madds} ({report.madds / 1e9:.3f}B), activations {report.act_bytes} bytes")
    return 0


def cmd_infer(args):
    g = _model(args.config)
    assign_weights(g, load_weights(args.model))
    channels = g.spec.input_channels
    if args.right is None and channels != 3:
        raise UsageError(f"mono inference (no --right) needs a mono graph; {g.spec.name} takes {channels} channels")
    if args.right is not None and channels != 6:
        raise UsageError(f"stereo inference needs a stereo graph; {g.spec.name} takes {channels} channels")
    left = read_image(args.left)
    right = read_image(args.right) if args.right is not None else None
    if right is not None and right.shape[:2] != left.shape[:2]:
        raise ShapeError(f"left image is {left.shape[1]}x{left.shape[0]}, right image is "
                         f"{right.shape[1]}x{right.shape[0]}", axis="h" if right.shape[0] != left.shape[0] else "w")
    h, w = left.shape[:2]
    factor = spatial_factor(g)
    size = None
    if args.resize:
        size = (max(factor, h // factor * factor), max(factor, w // factor * factor))
    eyes = [to_unit(left)] + ([to_unit(right)] if right is not None else [])
    if size is not None and size != (h, w):
        eyes = [resize_bilinear(e, *size) for e in eyes]
    x = Tensor(np.concatenate(eyes, axis=0)[None])
    _writable(args.out, args.png_out)
    disp = forward(g, x)
    write_tensor(args.out, disp)
    if args.png_out:
        write_image(args.png_out, disparity_to_gray(disp.data[0, 0], DISPARITY_MAX))
    print(f"disparity {disp.shape} written to {args.out}")
    return 0


def cmd_gradcheck(args):
    g = _model(args.config, dtype=np.float64)
    report = gradcheck(g, args.samples, args.eps, seed=args.seed)
    print(report.summary())
    if report.max_rel_error > GRADCHECK_TOL:
        print(f"FAIL: max relative error exceeds {GRADCHECK_TOL:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def cmd_train_toy(args):
    if args.lr < 0:
        raise UsageError(f"--lr must be non-negative, got {args.lr}")
    g = _model(args.config)
    samples = load_dataset(args.data)
    for x, gt in samples:
        if x.shape[1] != g.spec.input_channels:
            raise ShapeError(f"samples have {x.shape[1]} channels, {g.spec.name} takes {g.spec.input_channels}",
                             axis="c")
        h, w = x.shape[2:]
        if h % spatial_factor(g) or w % spatial_factor(g):
            raise ShapeError(f"sample size {h}x{w} is not divisible by {spatial_factor(g)}")
    _writable(args.out, args.log)
    losses = []
    for step in range(args.steps):
        x, gt = samples[step % len(samples)]
        loss = train_step(g, x, gt, args.lr)
        if not math.isfinite(loss):
            raise NumericError(f"loss became non-finite at step {step + 1}")
        losses.append(loss)
    lines = ["step,loss"] + [f"{i},{v!r}" for i, v in enumerate(losses, start=1)]
    _write_text(args.log, "\n".join(lines) + "\n")
    save_weights(args.out, g.weights)
    plot_loss(losses, figure_path(args.log))
    if losses:
        print(f"{args.steps} steps: loss {losses[0]:.6f} -> {losses[-1]:.6f}")
    else:
        print("0 steps: weights unchanged")
    return 0


def _rrtn_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return {p.name: p for p in sorted(directory.glob("*.rrtn"))}


def _gt_for(name, gts):
    if name in gts:
        return gts[name]
    stem = name[:-5]
    for suffix in ("_pred", "_disp", "_in"):
        if stem.endswith(suffix):
            stem = stem[:-len(suffix)]
    return gts.get(f"{stem}_gt.rrtn")


def cmd_eval(args):
    preds, gts = _rrtn_files(args.pred), _rrtn_files(args.gt)
    if not preds:
        raise FileNotFoundError(f"no .rrtn predictions in {args.pred}")
    pairs = []
    for name, path in preds.items():
        gt = _gt_for(name, gts)
        if gt is None:
            raise FileNotFoundError(f"no ground truth for {name} in {args.gt}")
        pairs.append((name, read_tensor(path), read_tensor(gt)))
    named = [(name, compute_metrics(p, d, args.min_valid, args.crop)) for name, p, d in pairs]
    _writable(args.csv)
    _write_text(args.csv, metrics_csv(named))
    agg = aggregate(m for _, m in named)
    plot_metrics(named, agg, figure_path(args.csv))
    print(f"{len(named)} files, {agg.valid_count} valid pixels: abs_rel {agg.abs_rel:.4f} "
          f"rmse {agg.rmse:.4f} rmse_log {agg.rmse_log:.4f} d1 {agg.delta1:.4f}")
    return 0


def cmd_sweep(args):
    sys.stdout.write(format_sweep(profile_preset_sweep()))
    return 0


COMMANDS = {
    "build": cmd_build, "profile": cmd_profile, "infer": cmd_infer, "gradcheck": cmd_gradcheck,
    "train-toy": cmd_train_toy, "eval": cmd_eval, "sweep": cmd_sweep,
}


def main(argv=None):
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as stop:  # --help exits 0, bad usage exits EXIT_USAGE
        return stop.code
    prev = parallel._threads
    if hasattr(args, "threads"):
        parallel.set_threads(args.threads)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ShapeError, ConfigError, FormatError, OSError, RRNetError,
            FloatingPointError) as exc:
        print(f"rrnet {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    finally:
        parallel.set_threads(prev)


def exit_code(exc):
    if isinstance(exc, (UsageError, ShapeError)):
        return EXIT_USAGE
    if isinstance(exc, (ConfigError, FormatError)):
        return EXIT_PARSE
    if isinstance(exc, (NumericError, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
