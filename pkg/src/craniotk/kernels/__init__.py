"""Sampling kernels with a compiled fast path and a numpy fallback.

The Cython extension covers the hot inner loops: full-grid affine resampling
and point-list trilinear sampling (the registration objective evaluates the
latter thousands of times per case). The numpy fallback is semantically
identical; set ``CRANIOTK_NO_NATIVE=1`` to force it. ``BACKEND`` records which
implementation is active. ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _fallback

if os.environ.get("CRANIOTK_NO_NATIVE"):
    _impl = _fallback
    BACKEND = "numpy"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
        BACKEND = "native"
    except ImportError:
        _impl = _fallback
        BACKEND = "numpy"

affine_sample_nearest = _impl.affine_sample_nearest
affine_sample_trilinear = _impl.affine_sample_trilinear
sample_points_trilinear = _impl.sample_points_trilinear

__all__ = [
    "BACKEND",
    "affine_sample_nearest",
    "affine_sample_trilinear",
    "sample_points_trilinear",
]
