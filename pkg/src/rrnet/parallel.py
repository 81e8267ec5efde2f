"""Worker-count control for the convolution kernels.

Work is split into fixed-size contiguous channel blocks whose boundaries do
not depend on the worker count. Each block writes a disjoint output slice,
so the arithmetic for every output element is the same whether one thread
or many run the blocks.
"""

import os
from concurrent.futures import ThreadPoolExecutor

_threads = None


def get_threads():
    if _threads is not None:
        return _threads
    env = os.environ.get("RRNET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1


def set_threads(n):
    """Cap the kernel worker count; ``None`` falls back to ``RRNET_THREADS``."""
    global _threads
    if n is not None and int(n) < 1:
        raise ValueError("thread count must be >= 1")
    _threads = None if n is None else int(n)


BLOCK = 16


def chunks(total, block=BLOCK):
    return [(a, min(a + block, total)) for a in range(0, total, block)]


def run_chunked(fn, total, block=BLOCK):
    """Call ``fn(start, stop)`` for every fixed block of ``range(total)``."""
    parts = chunks(total, block)
    workers = min(get_threads(), len(parts))
    if workers <= 1:
        for a, b in parts:
            fn(a, b)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for f in [pool.submit(fn, a, b) for a, b in parts]:
            f.result()
