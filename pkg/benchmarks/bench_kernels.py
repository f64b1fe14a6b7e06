#!/usr/bin/env python3
"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly so one process can compare them. Each
row reports the best-of-``repeat`` wall time and the speedup, and checks
that the two backends agree before timing.
"""
import argparse
import time

import numpy as np

from fslload import _pykernels

try:
    from fslload import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def best_time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    x = rng.standard_normal(1000)
    pts = rng.standard_normal((200, 6))
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    H, W, B = 64, 12, 72
    wx = rng.normal(0, 0.08, 4 * H)
    wh = rng.normal(0, 0.08, (4 * H, H))
    b = np.zeros(4 * H)
    wy = rng.normal(0, 0.08, H)
    X = rng.random((B, W))
    y = rng.random(B)
    Xs = rng.random((1, W))
    return [
        ("sampen_counts n=1000", lambda k: k.sampen_counts(x, 2, 0.2)),
        ("average_linkage n=200", lambda k: k.average_linkage(dist, 3)),
        ("lstm_loss_grad B=72 T=12 H=64", lambda k: k.lstm_loss_grad(wx, wh, b, wy, 0.0, X, y)),
        ("lstm_predict B=1 T=12 H=64", lambda k: k.lstm_predict(wx, wh, b, wy, 0.0, Xs)),
    ]


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, call in cases(rng):
        if not _same(call(_pykernels), call(_ckernels)):
            raise SystemExit(f"{name}: backends disagree")
        tp = best_time(lambda: call(_pykernels), args.repeat)
        tc = best_time(lambda: call(_ckernels), args.repeat)
        print(f"{name:32s} {tp * 1e3:10.3f} {tc * 1e3:10.3f} {tp / tc:8.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
