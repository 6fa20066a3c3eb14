# Compiled sampling kernels: hot inner loops of resampling and of the
# registration similarity evaluation. Semantics mirror _fallback.py exactly
# (round-half-up nearest neighbor; trilinear valid only inside the
# voxel-center hull, fill elsewhere).

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


@cython.boundscheck(False)
@cython.wraparound(False)
def affine_sample_nearest(vol, m, out_dims, int fill=0):
    cdef const cnp.uint8_t[:, :, ::1] v = np.ascontiguousarray(vol, dtype=np.uint8)
    cdef const double[:, ::1] mm = np.ascontiguousarray(m, dtype=np.float64)
    cdef Py_ssize_t onx = out_dims[0], ony = out_dims[1], onz = out_dims[2]
    out_arr = np.empty((onx, ony, onz), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], nz = v.shape[2]
    cdef Py_ssize_t i, j, k, xi, yi, zi
    cdef double x, y, z, xj, yj, zj, xk, yk, zk
    cdef cnp.uint8_t f = <cnp.uint8_t> fill
    with nogil:
        for i in range(onx):
            for j in range(ony):
                xj = mm[0, 0] * i + mm[0, 1] * j + mm[0, 3]
                yj = mm[1, 0] * i + mm[1, 1] * j + mm[1, 3]
                zj = mm[2, 0] * i + mm[2, 1] * j + mm[2, 3]
                for k in range(onz):
                    x = xj + mm[0, 2] * k
                    y = yj + mm[1, 2] * k
                    z = zj + mm[2, 2] * k
                    xi = <Py_ssize_t> floor(x + 0.5)
                    yi = <Py_ssize_t> floor(y + 0.5)
                    zi = <Py_ssize_t> floor(z + 0.5)
                    if 0 <= xi < nx and 0 <= yi < ny and 0 <= zi < nz:
                        out[i, j, k] = v[xi, yi, zi]
                    else:
                        out[i, j, k] = f
    return out_arr


@cython.boundscheck(False)
@cython.wraparound(False)
cdef inline double _tri(const float[:, :, ::1] v, double x, double y, double z,
                        double fill, Py_ssize_t nx, Py_ssize_t ny,
                        Py_ssize_t nz) noexcept nogil:
    cdef Py_ssize_t x0, y0, z0
    cdef double fx, fy, fz, c00, c01, c10, c11, c0, c1
    if x < 0 or x > nx - 1 or y < 0 or y > ny - 1 or z < 0 or z > nz - 1:
        return fill
    x0 = <Py_ssize_t> floor(x)
    y0 = <Py_ssize_t> floor(y)
    z0 = <Py_ssize_t> floor(z)
    if x0 > nx - 2:
        x0 = nx - 2
    if y0 > ny - 2:
        y0 = ny - 2
    if z0 > nz - 2:
        z0 = nz - 2
    if x0 < 0:
        x0 = 0
    if y0 < 0:
        y0 = 0
    if z0 < 0:
        z0 = 0
    fx = x - x0
    fy = y - y0
    fz = z - z0
    c00 = v[x0, y0, z0] * (1 - fx) + v[x0 + 1, y0, z0] * fx
    c01 = v[x0, y0, z0 + 1] * (1 - fx) + v[x0 + 1, y0, z0 + 1] * fx
    c10 = v[x0, y0 + 1, z0] * (1 - fx) + v[x0 + 1, y0 + 1, z0] * fx
    c11 = v[x0, y0 + 1, z0 + 1] * (1 - fx) + v[x0 + 1, y0 + 1, z0 + 1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


@cython.boundscheck(False)
@cython.wraparound(False)
def affine_sample_trilinear(vol, m, out_dims, double fill=0.0):
    vol32 = np.ascontiguousarray(vol, dtype=np.float32)
    cdef const float[:, :, ::1] v = vol32
    cdef const double[:, ::1] mm = np.ascontiguousarray(m, dtype=np.float64)
    cdef Py_ssize_t onx = out_dims[0], ony = out_dims[1], onz = out_dims[2]
    out_arr = np.empty((onx, ony, onz), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], nz = v.shape[2]
    cdef Py_ssize_t i, j, k
    cdef double x, y, z, xj, yj, zj
    # degenerate single-voxel axes are handled by the fallback path
    if nx < 2 or ny < 2 or nz < 2:
        from . import _fallback
        return _fallback.affine_sample_trilinear(vol32, np.asarray(m), out_dims, fill)
    with nogil:
        for i in range(onx):
            for j in range(ony):
                xj = mm[0, 0] * i + mm[0, 1] * j + mm[0, 3]
                yj = mm[1, 0] * i + mm[1, 1] * j + mm[1, 3]
                zj = mm[2, 0] * i + mm[2, 1] * j + mm[2, 3]
                for k in range(onz):
                    x = xj + mm[0, 2] * k
                    y = yj + mm[1, 2] * k
                    z = zj + mm[2, 2] * k
                    out[i, j, k] = <float> _tri(v, x, y, z, fill, nx, ny, nz)
    return out_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def sample_points_trilinear(vol, pts, double fill=0.0):
    vol32 = np.ascontiguousarray(vol, dtype=np.float32)
    cdef const float[:, :, ::1] v = vol32
    pts64 = np.ascontiguousarray(pts, dtype=np.float64)
    cdef const double[:, ::1] p = pts64
    cdef Py_ssize_t n = p.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], nz = v.shape[2]
    cdef Py_ssize_t i
    if nx < 2 or ny < 2 or nz < 2:
        from . import _fallback
        return _fallback.sample_points_trilinear(vol32, pts64, fill)
    with nogil:
        for i in range(n):
            out[i] = _tri(v, p[i, 0], p[i, 1], p[i, 2], fill, nx, ny, nz)
    return out_arr
