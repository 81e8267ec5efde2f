"""Synthetic stereo scenes for desk-scale training.

Each scene is a tilted disparity plane with additive noise. The left image
is a smooth random texture; the right image is the left one resampled
along rows by the per-pixel disparity, so the pair actually encodes the
target. Samples are stored as ``NNN_in.rrtn`` (1, 6, h, w) and
``NNN_gt.rrtn`` (1, 1, h, w).
"""

from pathlib import Path

import argparse

import numpy as np

from .errors import RRNetError, ShapeError
from .serialization import read_tensor, write_tensor
from .tensor import Tensor


def _texture(rng, h, w):
    coarse = rng.random((3, h // 4 + 2, w // 4 + 2))
    ys = np.linspace(0, coarse.shape[1] - 1.001, h)
    xs = np.linspace(0, coarse.shape[2] - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    top = c[:, y0][:, :, x0] * (1 - fx) + c[:, y0][:, :, x0 + 1] * fx
    bot = c[:, y0 + 1][:, :, x0] * (1 - fx) + c[:, y0 + 1][:, :, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def synthetic_scene(rng, h=32, w=64, noise=0.001, lo=0.002, hi=0.02):
    """Return (input (1,6,h,w), disparity (1,1,h,w)) as float32 arrays."""
    a, b = sorted(rng.uniform(lo, hi, size=2))
    tilt_x, tilt_y = rng.uniform(-1, 1, size=2)
    yy, xx = np.mgrid[0:h, 0:w]
    plane = tilt_x * xx / max(w - 1, 1) + tilt_y * yy / max(h - 1, 1)
    plane = (plane - plane.min()) / max(np.ptp(plane), 1e-12)
    disp = a + (b - a) * plane + rng.normal(0.0, noise, size=(h, w))
    disp = np.clip(disp, lo / 2, 0.29)
    left = _texture(rng, h, w)
    src = xx - disp * w
    x0 = np.clip(np.floor(src).astype(int), 0, w - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    f = np.clip(src - np.floor(src), 0, 1)
    rows = np.arange(h)[:, None]
    right = left[:, rows, x0] * (1 - f) + left[:, rows, x1] * f
    x = np.concatenate([left, right], axis=0)[None].astype(np.float32)
    return x, disp[None, None].astype(np.float32)


def make_dataset(count=5, h=32, w=64, seed=0):
    rng = np.random.default_rng(seed)
    return [synthetic_scene(rng, h, w) for _ in range(count)]


def write_dataset(directory, count=5, h=32, w=64, seed=0):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (x, gt) in enumerate(make_dataset(count, h, w, seed)):
        write_tensor(directory / f"{i:03d}_in.rrtn", Tensor(x))
        write_tensor(directory / f"{i:03d}_gt.rrtn", Tensor(gt))
        paths.append(directory / f"{i:03d}_in.rrtn")
    return paths


def load_dataset(directory):
    """Load every ``NNN_in.rrtn`` / ``NNN_gt.rrtn`` pair, sorted by index."""
    directory = Path(directory)
    inputs = sorted(directory.glob("*_in.rrtn"))
    if not inputs:
        raise RRNetError(f"no *_in.rrtn samples in {directory}")
    samples = []
    for p in inputs:
        gt_path = p.with_name(p.name.replace("_in.rrtn", "_gt.rrtn"))
        if not gt_path.exists():
            raise RRNetError(f"missing ground truth {gt_path.name} for {p.name}")
        x, gt = read_tensor(p), read_tensor(gt_path)
        if gt.shape[1] != 1 or gt.shape[0] != x.shape[0] or gt.shape[2:] != x.shape[2:]:
            raise ShapeError(f"{gt_path.name} has shape {gt.shape}, incompatible with {p.name} {x.shape}")
        samples.append((x, gt))
    return samples


def main(argv=None):
    p = argparse.ArgumentParser(prog="python -m rrnet.data",
                                description="Write a synthetic stereo dataset for train-toy.")
    p.add_argument("out")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)
    for path in write_dataset(a.out, a.count, a.height, a.width, a.seed):
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
