#!/usr/bin/env python3
"""Benchmark the compiled sampling kernels against the numpy fallback.

Workloads mirror real pipeline use: full-grid resampling at common-grid
scale and the band-point sampling the registration objective performs
thousands of times per case.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from craniotk.kernels import _fallback

try:
    from craniotk.kernels import _native
except ImportError:
    _native = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(name, make_args, fn_name, repeats):
    args = make_args()
    rows = []
    base = None
    for label, mod in (("numpy", _fallback), ("native", _native)):
        if mod is None:
            rows.append((label, None, None))
            continue
        fn = getattr(mod, fn_name)
        t = timeit(lambda: fn(*args), repeats)
        speedup = base / t if base else 1.0
        if base is None:
            base = t
        rows.append((label, t, speedup))
    print(f"\n{name}")
    for label, t, speedup in rows:
        if t is None:
            print(f"  {label:<8} (not built)")
        else:
            print(f"  {label:<8} {t * 1e3:9.2f} ms   x{speedup:.1f}")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true",
                        help="smaller volumes, fewer repeats")
    opts = parser.parse_args()
    rng = np.random.default_rng(0)
    scale = 0.5 if opts.quick else 1.0
    repeats = 3 if opts.quick else 5

    dims = tuple(int(d * scale) for d in (304, 304, 224))
    vol_u8 = (rng.random(dims) < 0.1).astype(np.uint8)
    vol_f32 = rng.random(dims).astype(np.float32)
    ang = 0.2
    mat = np.array([[np.cos(ang), -np.sin(ang), 0, 5.0],
                    [np.sin(ang), np.cos(ang), 0, -3.0],
                    [0, 0, 1.0, 2.0]])
    n_pts = int(200_000 * scale)
    pts = rng.uniform(0, min(dims) - 1, (n_pts, 3))

    print(f"volume {dims}, {n_pts} sample points")
    bench(f"affine_sample_nearest on {dims}",
          lambda: (vol_u8, mat, dims), "affine_sample_nearest", repeats)
    bench(f"affine_sample_trilinear on {dims}",
          lambda: (vol_f32, mat, dims, 0.0), "affine_sample_trilinear",
          repeats)
    bench(f"sample_points_trilinear on {n_pts} points "
          "(registration inner loop)",
          lambda: (vol_f32, pts, 0.0), "sample_points_trilinear",
          repeats * 4)


if __name__ == "__main__":
    main()
