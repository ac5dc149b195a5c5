#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_backends.py [--repeats N]

Runs every hot kernel on shapes representative of desk-scale training
(64x64 inputs, the default channel schedule) and prints a table with the
per-call times and the speedup of numba over numpy.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from edgenet.kernels import nb_backend, np_backend


def timed(fn, *args, repeats):
    fn(*args)  # warm-up (jit compile / cache load)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    x64 = rng.normal(0, 1, (16, 64, 64)).astype(np.float32)
    q = rng.normal(0, 1, (16, 64, 64)).astype(np.float32)
    stem_w = rng.normal(0, 1, (16, 3, 3, 3)).astype(np.float32)
    img = rng.normal(0, 1, (3, 64, 64)).astype(np.float32)
    gy = rng.normal(0, 1, (16, 64, 64)).astype(np.float32)
    kern = np.zeros((3, 3), dtype=np.float32)
    kern[0, 1] = 1.0
    _, attn = np_backend.local_attn_fwd(q, q, x64, 4, 3)
    prob = rng.random((256, 256)).astype(np.float32)
    pred = np.argwhere(rng.random((128, 128)) < 0.08).astype(np.int64)
    gt = np.argwhere(rng.random((128, 128)) < 0.08).astype(np.int64)

    yield "conv3x3 fwd 3->16 @64^2", lambda b: b.conv2d_fwd(img, stem_w, None, 1, 1)
    yield "conv3x3 bwd", lambda b: b.conv2d_bwd(img, stem_w, gy, 1, 1, False, True, True)
    yield "depthwise shift @64^2", lambda b: b.depthwise3x3_fwd(x64, kern)
    yield "attention fwd 4h r3 @64^2", lambda b: b.local_attn_fwd(q, q, x64, 4, 3)
    yield "attention bwd", lambda b: b.local_attn_bwd(q, q, x64, attn, gy, 4, 3)
    yield "bilinear x4 @16^2", lambda b: b.bilinear_fwd(x64[:, :16, :16], 4)
    yield "nms thinning @256^2", lambda b: b.nms_thin(prob)
    yield "greedy matching ~1300px", lambda b: b.greedy_match(pred, gt, 3.0)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    print("-" * 61)
    for name, call in cases(rng):
        t_np = timed(call, np_backend, repeats=args.repeats)
        t_nb = timed(call, nb_backend, repeats=args.repeats)
        print(f"{name:<28} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
