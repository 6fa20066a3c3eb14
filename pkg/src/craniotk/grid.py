"""Binary voxel grids with physical geometry, plus the core mask operations.

All masks in the pipeline (full skulls, defected skulls, defects, predictions,
atlas) are :class:`VoxelGrid` instances; pre-threshold averages and distance
maps are :class:`ScalarGrid`. Grids are immutable after construction and all
operations are pure functions, so per-case parallelism is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyMaskError, FullMaskError, GeometryMismatchError

# Geometry comparisons are exact on dims and within this tolerance (mm) on
# spacing/origin; anything beyond is a hard mismatch, never a silent resample.
GEOMETRY_TOL_MM = 1e-9

_FACE_STRUCT = ndimage.generate_binary_structure(3, 1)   # 6-connectivity
_FULL_STRUCT = ndimage.generate_binary_structure(3, 3)   # 26-connectivity


def _f32exact(values):
    # Geometry is stored at float32 precision so that volume files (which
    # carry float32 spacing/origin) round-trip without drift.
    return tuple(float(np.float32(v)) for v in values)


@dataclass(frozen=True)
class GridGeometry:
    """Axis-aligned voxel lattice: voxel counts, mm spacing, world origin.

    ``origin`` is the world position (mm) of the *center* of voxel (0, 0, 0);
    voxel (i, j, k) is centered at ``origin + (i, j, k) * spacing``.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        spacing = _f32exact(self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        origin = _f32exact(self.origin)
        if len(origin) != 3:
            raise ValueError(f"origin must be a 3-vector, got {self.origin}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def voxel_volume_mm3(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def center_world(self) -> np.ndarray:
        return self.world_from_index((np.asarray(self.dims) - 1) / 2.0)

    def world_from_index(self, idx) -> np.ndarray:
        """World coordinates (mm) of (possibly fractional) voxel indices."""
        return np.asarray(self.origin) + np.asarray(idx, dtype=float) * self.spacing

    def index_from_world(self, pts) -> np.ndarray:
        """Fractional voxel indices of world points."""
        return (np.asarray(pts, dtype=float) - self.origin) / self.spacing

    def nearest_index(self, pts) -> np.ndarray:
        # round-half-up, matching the sampling kernels
        return np.floor(self.index_from_world(pts) + 0.5).astype(np.int64)

    @property
    def affine(self) -> np.ndarray:
        """4x4 map from homogeneous voxel index to world mm."""
        a = np.eye(4)
        a[:3, :3] = np.diag(self.spacing)
        a[:3, 3] = self.origin
        return a

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Hull of voxel centers: (lowest corner, highest corner) in mm."""
        lo = np.asarray(self.origin, dtype=float)
        hi = self.world_from_index(np.asarray(self.dims) - 1)
        return lo, hi

    def approx_eq(self, other: "GridGeometry", tol: float = GEOMETRY_TOL_MM) -> bool:
        return (
            self.dims == other.dims
            and all(abs(a - b) <= tol for a, b in zip(self.spacing, other.spacing))
            and all(abs(a - b) <= tol for a, b in zip(self.origin, other.origin))
        )


def world_axis_coords(geom: GridGeometry):
    """Per-axis 1-D world coordinate arrays (broadcast to rasterize shapes)."""
    return tuple(
        geom.origin[a] + np.arange(geom.dims[a], dtype=float) * geom.spacing[a]
        for a in range(3)
    )


class VoxelGrid:
    """Dense binary occupancy mask on a :class:`GridGeometry`.

    ``data`` is a read-only C-contiguous bool array of shape ``dims``
    (axis order x, y, z). The constructor takes ownership of the array.
    """

    __slots__ = ("geom", "data")

    def __init__(self, geom: GridGeometry, data):
        data = np.ascontiguousarray(data, dtype=bool)
        if data.shape != geom.dims:
            raise ValueError(f"data shape {data.shape} != dims {geom.dims}")
        data.setflags(write=False)
        object.__setattr__(self, "geom", geom)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("VoxelGrid is immutable")

    @classmethod
    def empty(cls, geom: GridGeometry) -> "VoxelGrid":
        return cls(geom, np.zeros(geom.dims, dtype=bool))

    @classmethod
    def full(cls, geom: GridGeometry) -> "VoxelGrid":
        return cls(geom, np.ones(geom.dims, dtype=bool))

    @property
    def dims(self):
        return self.geom.dims

    @property
    def spacing(self):
        return self.geom.spacing

    @property
    def origin(self):
        return self.geom.origin

    @property
    def count(self) -> int:
        """Number of set voxels."""
        return int(self.data.sum())

    @property
    def is_empty(self) -> bool:
        return not self.data.any()

    @property
    def is_full(self) -> bool:
        return bool(self.data.all())

    def with_data(self, data) -> "VoxelGrid":
        return VoxelGrid(self.geom, data)

    def same_geometry(self, other, tol: float = GEOMETRY_TOL_MM) -> bool:
        return self.geom.approx_eq(other.geom, tol)

    def set_world_coords(self) -> np.ndarray:
        """World coordinates (N, 3) of all set voxels, C-scan order."""
        idx = np.argwhere(self.data)
        return self.geom.world_from_index(idx)

    def centroid_world(self) -> np.ndarray:
        if self.is_empty:
            raise EmptyMaskError("centroid of an empty mask")
        return self.set_world_coords().mean(axis=0)

    def equals(self, other: "VoxelGrid") -> bool:
        return self.same_geometry(other) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return (f"VoxelGrid(dims={self.dims}, spacing={self.spacing}, "
                f"on={self.count})")


class ScalarGrid:
    """Real-valued samples on a :class:`GridGeometry` (atlas averages,
    distance maps). Values must be finite everywhere."""

    __slots__ = ("geom", "data")

    def __init__(self, geom: GridGeometry, data):
        data = np.ascontiguousarray(data)
        if data.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            data = data.astype(np.float64)
        if data.shape != geom.dims:
            raise ValueError(f"data shape {data.shape} != dims {geom.dims}")
        if not np.isfinite(data).all():
            raise ValueError("ScalarGrid requires finite values everywhere")
        data.setflags(write=False)
        object.__setattr__(self, "geom", geom)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarGrid is immutable")

    @property
    def dims(self):
        return self.geom.dims

    @property
    def spacing(self):
        return self.geom.spacing

    @property
    def origin(self):
        return self.geom.origin

    def same_geometry(self, other, tol: float = GEOMETRY_TOL_MM) -> bool:
        return self.geom.approx_eq(other.geom, tol)

    def __repr__(self):
        return f"ScalarGrid(dims={self.dims}, spacing={self.spacing})"


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def threshold(g: ScalarGrid, t: float) -> VoxelGrid:
    """Binarize a scalar grid: voxel set iff value >= t. Geometry is copied."""
    t = float(t)
    if not np.isfinite(t):
        raise ValueError("threshold must be finite")
    return VoxelGrid(g.geom, g.data >= t)


def surface(m: VoxelGrid) -> VoxelGrid:
    """Surface voxels: set voxels with >= 1 face-adjacent unset neighbor.

    Neighbors outside the grid do not count as unset, so a mask covering the
    whole grid has no surface. This definition is shared by the distance
    transform and the Hausdorff metric so both agree on what "boundary" means.
    """
    eroded = ndimage.binary_erosion(m.data, structure=_FACE_STRUCT, border_value=1)
    return m.with_data(m.data & ~eroded)


def signed_distance(m: VoxelGrid) -> ScalarGrid:
    """Euclidean distance (mm) to the mask surface: negative inside, positive
    outside, zero on surface voxels. Exact for voxel-center-to-voxel-center
    distances under the face-adjacency surface definition."""
    if m.is_empty:
        raise EmptyMaskError("signed distance of an empty mask")
    surf = surface(m)
    if surf.is_empty:
        raise FullMaskError("mask fills the grid; no boundary exists")
    d = ndimage.distance_transform_edt(~surf.data, sampling=m.spacing)
    return ScalarGrid(m.geom, np.where(m.data, -d, d))


def _ball(radius_mm: float, spacing) -> np.ndarray:
    """Spherical structuring element: offsets with ||offset * spacing|| <= r."""
    if radius_mm < 0:
        raise ValueError("radius_mm must be >= 0")
    r = [int(np.floor(radius_mm / s + 1e-9)) for s in spacing]
    ox, oy, oz = np.mgrid[-r[0]:r[0] + 1, -r[1]:r[1] + 1, -r[2]:r[2] + 1]
    d2 = ((ox * spacing[0]) ** 2 + (oy * spacing[1]) ** 2 + (oz * spacing[2]) ** 2)
    return d2 <= radius_mm ** 2 + 1e-9


def morph(m: VoxelGrid, op: str, radius_mm: float) -> VoxelGrid:
    """Binary morphology with a spherical element of physical radius (mm).

    ``op`` is one of dilate | erode | close | open. Radius 0 is the identity.
    """
    if radius_mm == 0:
        return m.with_data(m.data)
    ball = _ball(radius_mm, m.spacing)
    if op == "dilate":
        out = ndimage.binary_dilation(m.data, structure=ball)
    elif op == "erode":
        out = ndimage.binary_erosion(m.data, structure=ball)
    elif op == "close":
        out = ndimage.binary_erosion(
            ndimage.binary_dilation(m.data, structure=ball), structure=ball)
    elif op == "open":
        out = ndimage.binary_dilation(
            ndimage.binary_erosion(m.data, structure=ball), structure=ball)
    else:
        raise ValueError(f"unknown morphology op {op!r}")
    return m.with_data(out)


def largest_component(m: VoxelGrid, connectivity: int = 26) -> VoxelGrid:
    """Keep only the largest connected component (6- or 26-connectivity).

    Size ties are broken by the lowest linear (C-order) index at which a
    component first appears. Empty input gives empty output.
    """
    if connectivity == 6:
        struct = _FACE_STRUCT
    elif connectivity == 26:
        struct = _FULL_STRUCT
    else:
        raise ValueError("connectivity must be 6 or 26")
    labels, nlab = ndimage.label(m.data, structure=struct)
    if nlab == 0:
        return m.with_data(np.zeros(m.dims, dtype=bool))
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=nlab + 1)
    counts[0] = 0
    best = counts.max()
    candidates = np.flatnonzero(counts == best)
    if len(candidates) > 1:
        uniq, first = np.unique(flat, return_index=True)
        first_of = dict(zip(uniq.tolist(), first.tolist()))
        candidates = sorted(candidates, key=lambda lab: first_of[lab])
    return m.with_data(labels == candidates[0])


def component_count(m: VoxelGrid, connectivity: int = 6) -> int:
    struct = _FACE_STRUCT if connectivity == 6 else _FULL_STRUCT
    _, nlab = ndimage.label(m.data, structure=struct)
    return int(nlab)


_SET_OPS = {
    "union": lambda a, b: a | b,
    "intersect": lambda a, b: a & b,
    "subtract": lambda a, b: a & ~b,
    "xor": lambda a, b: a ^ b,
}


def set_ops(a: VoxelGrid, b: VoxelGrid, op: str) -> VoxelGrid:
    """Elementwise boolean combination of two masks on identical geometry."""
    if op not in _SET_OPS:
        raise ValueError(f"unknown set op {op!r}")
    if not a.same_geometry(b):
        raise GeometryMismatchError(
            f"grids differ: {a.geom} vs {b.geom}")
    return a.with_data(_SET_OPS[op](a.data, b.data))


def union(a, b):
    return set_ops(a, b, "union")


def intersect(a, b):
    return set_ops(a, b, "intersect")


def subtract(a, b):
    return set_ops(a, b, "subtract")


def xor(a, b):
    return set_ops(a, b, "xor")
