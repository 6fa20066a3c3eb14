"""Numpy implementations of the sampling kernels.

Semantics are identical to the compiled extension: nearest-neighbor rounding
is floor(x + 0.5); trilinear samples are valid only when the point lies inside
the voxel-center hull on every axis, otherwise the fill value is returned.
Full-grid sampling is chunked along x to bound peak memory.
"""

from __future__ import annotations

import numpy as np

_SLAB = 16


def _slab_coords(m, i0, i1, ny, nz):
    i = np.arange(i0, i1, dtype=np.float64)[:, None, None]
    j = np.arange(ny, dtype=np.float64)[None, :, None]
    k = np.arange(nz, dtype=np.float64)[None, None, :]
    x = m[0, 0] * i + m[0, 1] * j + m[0, 2] * k + m[0, 3]
    y = m[1, 0] * i + m[1, 1] * j + m[1, 2] * k + m[1, 3]
    z = m[2, 0] * i + m[2, 1] * j + m[2, 2] * k + m[2, 3]
    return x, y, z


def affine_sample_nearest(vol: np.ndarray, m: np.ndarray, out_dims,
                          fill: int = 0) -> np.ndarray:
    """Nearest-neighbor resample of a uint8 volume onto ``out_dims``.

    ``m`` is the 3x4 affine taking output voxel index (i, j, k, 1) to input
    fractional index coordinates.
    """
    vol = np.ascontiguousarray(vol, dtype=np.uint8)
    m = np.asarray(m, dtype=np.float64)
    nx, ny, nz = vol.shape
    onx, ony, onz = out_dims
    out = np.full((onx, ony, onz), fill, dtype=np.uint8)
    for i0 in range(0, onx, _SLAB):
        i1 = min(i0 + _SLAB, onx)
        x, y, z = _slab_coords(m, i0, i1, ony, onz)
        xi = np.floor(x + 0.5).astype(np.int64)
        yi = np.floor(y + 0.5).astype(np.int64)
        zi = np.floor(z + 0.5).astype(np.int64)
        ok = ((xi >= 0) & (xi < nx) & (yi >= 0) & (yi < ny)
              & (zi >= 0) & (zi < nz))
        slab = out[i0:i1]
        slab[ok] = vol[xi[ok], yi[ok], zi[ok]]
    return out


def _trilinear(vol, x, y, z, fill):
    nx, ny, nz = vol.shape
    ok = ((x >= 0) & (x <= nx - 1) & (y >= 0) & (y <= ny - 1)
          & (z >= 0) & (z <= nz - 1))
    # clip so gather indices stay in range; invalid entries overwritten below
    xc = np.clip(x, 0, nx - 1)
    yc = np.clip(y, 0, ny - 1)
    zc = np.clip(z, 0, nz - 1)
    x0 = np.minimum(np.floor(xc), nx - 2).astype(np.int64) if nx > 1 else np.zeros_like(xc, dtype=np.int64)
    y0 = np.minimum(np.floor(yc), ny - 2).astype(np.int64) if ny > 1 else np.zeros_like(yc, dtype=np.int64)
    z0 = np.minimum(np.floor(zc), nz - 2).astype(np.int64) if nz > 1 else np.zeros_like(zc, dtype=np.int64)
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)
    fx = xc - x0
    fy = yc - y0
    fz = zc - z0
    v = vol
    c00 = v[x0, y0, z0] * (1 - fx) + v[x1, y0, z0] * fx
    c01 = v[x0, y0, z1] * (1 - fx) + v[x1, y0, z1] * fx
    c10 = v[x0, y1, z0] * (1 - fx) + v[x1, y1, z0] * fx
    c11 = v[x0, y1, z1] * (1 - fx) + v[x1, y1, z1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    res = c0 * (1 - fz) + c1 * fz
    res = np.where(ok, res, fill)
    return res


def affine_sample_trilinear(vol: np.ndarray, m: np.ndarray, out_dims,
                            fill: float = 0.0) -> np.ndarray:
    """Trilinear resample of a float32 volume onto ``out_dims`` (see above)."""
    vol = np.ascontiguousarray(vol, dtype=np.float32)
    m = np.asarray(m, dtype=np.float64)
    onx, ony, onz = out_dims
    out = np.empty((onx, ony, onz), dtype=np.float32)
    for i0 in range(0, onx, _SLAB):
        i1 = min(i0 + _SLAB, onx)
        x, y, z = _slab_coords(m, i0, i1, ony, onz)
        out[i0:i1] = _trilinear(vol, x, y, z, fill)
    return out


def sample_points_trilinear(vol: np.ndarray, pts: np.ndarray,
                            fill: float = 0.0) -> np.ndarray:
    """Trilinear samples of a float32 volume at (N, 3) fractional indices."""
    vol = np.ascontiguousarray(vol, dtype=np.float32)
    pts = np.asarray(pts, dtype=np.float64)
    return _trilinear(vol, pts[:, 0], pts[:, 1], pts[:, 2], fill).astype(np.float64)
