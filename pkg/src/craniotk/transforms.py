"""Rigid world-coordinate transforms and the atlas common-grid constants.

Euler convention used throughout: intrinsic z-y-x, i.e. the rotation matrix
is ``Rz(rz) @ Ry(ry) @ Rx(rx)`` applied to column vectors. Transform files on
disk are 4-line ASCII, 4 space-separated decimals per row (row-major world-mm
matrix), in the style of FLIRT .mat files.
"""

from __future__ import annotations

import numpy as np

from .grid import GridGeometry

RIGID_TOL = 1e-6

# Common-space lattice (atlas resolution). Overridable in config; the grid is
# centered on the world origin unless an explicit origin is given.
COMMON_SPACING = (0.695, 0.695, 0.715)
COMMON_DIMS = (304, 304, 224)


def common_grid(dims=COMMON_DIMS, spacing=COMMON_SPACING, origin=None) -> GridGeometry:
    """The common-space grid; default is the atlas lattice centered at 0 mm
    (to within the float32 precision geometry is stored at)."""
    spacing = tuple(float(np.float32(s)) for s in spacing)
    if origin is None:
        origin = tuple(-(n - 1) * s / 2.0 for n, s in zip(dims, spacing))
    return GridGeometry(tuple(dims), spacing, tuple(origin))


def euler_matrix(rx: float = 0.0, ry: float = 0.0, rz: float = 0.0) -> np.ndarray:
    """3x3 rotation, intrinsic z-y-x: Rz(rz) @ Ry(ry) @ Rx(rx). Radians."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rmx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rmy = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rmz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rmz @ rmy @ rmx


class RigidTransform:
    """4x4 homogeneous world-coordinate map (mm -> mm), rotation + translation.

    The upper-left 3x3 block is orthonormal with determinant +1; the last row
    is (0, 0, 0, 1). Instances are immutable.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got shape {m.shape}")
        if np.max(np.abs(m[3] - (0, 0, 0, 1))) > RIGID_TOL:
            raise ValueError(f"last row must be (0,0,0,1), got {m[3]}")
        r = m[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > RIGID_TOL:
            raise ValueError("rotation block is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation block has negative determinant (reflection)")
        m[3] = (0.0, 0.0, 0.0, 1.0)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):
        raise AttributeError("RigidTransform is immutable")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_parts(cls, rotation, translation) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_euler(cls, rx=0.0, ry=0.0, rz=0.0, translation=(0.0, 0.0, 0.0),
                   center=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation about ``center`` followed by ``translation`` (mm)."""
        r = euler_matrix(rx, ry, rz)
        c = np.asarray(center, dtype=float)
        t = c + np.asarray(translation, dtype=float) - r @ c
        return cls.from_parts(r, t)

    @classmethod
    def translation_only(cls, t) -> "RigidTransform":
        return cls.from_parts(np.eye(3), t)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "RigidTransform":
        r = self.rotation.T
        return RigidTransform.from_parts(r, -r @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other))(p) == self(other(p))."""
        return RigidTransform(self.matrix @ other.matrix)

    def apply(self, pts) -> np.ndarray:
        """Transform world points, shape (..., 3)."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation

    def rotation_angle_deg(self) -> float:
        """Geodesic rotation angle away from identity, degrees."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))

    def approx_eq(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(self.matrix - other.matrix)) <= tol)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.matrix, other.matrix)

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def __repr__(self):
        t = ", ".join(f"{v:.3f}" for v in self.translation)
        return f"RigidTransform(angle={self.rotation_angle_deg():.2f}deg, t=({t}))"


def transform_discrepancy(t_a: RigidTransform, t_b: RigidTransform,
                          at_point=(0.0, 0.0, 0.0)) -> tuple[float, float]:
    """How far two transforms disagree: (degrees, mm displacement at a point).

    The mm term is the displacement of ``at_point`` under ``t_a o t_b^-1``;
    pass a mask centroid so the number reflects error where the object is.
    """
    err = t_a.compose(t_b.inverse())
    p = np.asarray(at_point, dtype=float)
    return err.rotation_angle_deg(), float(np.linalg.norm(err.apply(p) - p))
