"""Synthetic full-skull masks: ellipsoidal shells with randomized geometry.

Phantoms stand in for real full skulls so every pipeline stage can be
exercised and measured without patient data. The canonical phantom is an
ellipsoidal shell centered at the world origin with the bottom cut off
(skull base); a rigid pose moves it into scanner position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfBoundsError
from .grid import GridGeometry, VoxelGrid, largest_component, world_axis_coords
from .transforms import RigidTransform

DEFAULT_SEMIAXES = (70.0, 90.0, 65.0)  # adult-skull scale, mm
DEFAULT_THICKNESS = 6.0
DEFAULT_BASE_CUT = 0.25
DEFAULT_ANTERIOR_EXCESS = 0.15

_SLAB = 32


@dataclass(frozen=True)
class PhantomSpec:
    """One synthetic skull: outer ellipsoid semiaxes (mm), shell thickness
    (mm), fraction of total height removed from the bottom, rigid pose, and
    the RNG seed it was drawn with.

    ``anterior_excess`` makes the shell egg-shaped in plan view (the +y
    semiaxis is b*(1+e), the -y semiaxis b*(1-e)), like a real skull. It
    keeps mid-sagittal (x) mirror symmetry but removes the 180-degree
    rotational symmetry a plain ellipsoid would have, so pose recovery is
    well-posed.
    """

    outer_semiaxes: tuple[float, float, float] = DEFAULT_SEMIAXES
    thickness: float = DEFAULT_THICKNESS
    base_cut_fraction: float = DEFAULT_BASE_CUT
    anterior_excess: float = DEFAULT_ANTERIOR_EXCESS
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    seed: int = 0

    def __post_init__(self):
        a = tuple(float(v) for v in self.outer_semiaxes)
        if len(a) != 3:
            raise ValueError("outer_semiaxes must be a 3-vector")
        if not (0 <= self.anterior_excess < 0.5):
            raise ValueError("anterior_excess must be in [0, 0.5)")
        shortest = min(a[0], a[1] * (1 - self.anterior_excess), a[2])
        if not (shortest > self.thickness > 0):
            raise ValueError(
                f"need semiaxes > thickness > 0, got {a} vs {self.thickness}")
        if not (0 <= self.base_cut_fraction < 0.5):
            raise ValueError("base_cut_fraction must be in [0, 0.5)")
        object.__setattr__(self, "outer_semiaxes", a)
        object.__setattr__(self, "thickness", float(self.thickness))
        object.__setattr__(self, "base_cut_fraction", float(self.base_cut_fraction))
        object.__setattr__(self, "anterior_excess", float(self.anterior_excess))

    @property
    def inner_semiaxes(self) -> tuple[float, float, float]:
        return tuple(v - self.thickness for v in self.outer_semiaxes)


@dataclass(frozen=True)
class PopulationVariability:
    """Per-field standard deviations for phantom population sampling.

    Gaussian jitter truncated at +-2.5 sigma; truncation bounds are further
    clamped so every sampled spec satisfies the PhantomSpec invariants.
    """

    semiaxes_std_mm: float = 4.0
    thickness_std_mm: float = 0.8
    rotation_std_deg: float = 4.0
    translation_std_mm: float = 4.0

    @classmethod
    def zero(cls) -> "PopulationVariability":
        return cls(0.0, 0.0, 0.0, 0.0)

    def scaled(self, factor: float) -> "PopulationVariability":
        return PopulationVariability(
            self.semiaxes_std_mm * factor,
            self.thickness_std_mm * factor,
            self.rotation_std_deg * factor,
            self.translation_std_mm * factor,
        )


def _truncated_normal(rng, loc, std, width=2.5):
    if std == 0:
        return float(loc)
    v = rng.normal(loc, std)
    return float(np.clip(v, loc - width * std, loc + width * std))


def sample_population(n: int, seed: int,
                      variability: PopulationVariability | None = None,
                      ) -> list[PhantomSpec]:
    """Draw ``n`` phantom specs around the defaults, deterministically."""
    if n < 1:
        raise ValueError("n must be >= 1")
    var = variability if variability is not None else PopulationVariability()
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        semi = tuple(_truncated_normal(rng, d, var.semiaxes_std_mm)
                     for d in DEFAULT_SEMIAXES)
        thick = _truncated_normal(rng, DEFAULT_THICKNESS, var.thickness_std_mm)
        thick = float(np.clip(thick, 2.0, min(semi) - 10.0))
        rot = np.radians([
            _truncated_normal(rng, 0.0, var.rotation_std_deg) for _ in range(3)])
        trans = [_truncated_normal(rng, 0.0, var.translation_std_mm)
                 for _ in range(3)]
        pose = RigidTransform.from_euler(rx=rot[0], ry=rot[1], rz=rot[2],
                                         translation=trans)
        specs.append(PhantomSpec(semi, thick, pose=pose, seed=i))
    return specs


def _posed_bbox(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    # exact axis-aligned bounds of the posed outer shape (bounded by the
    # ellipsoid with the longer anterior semiaxis)
    r = spec.pose.rotation
    s = np.asarray(spec.outer_semiaxes) * (1.0, 1.0 + spec.anterior_excess, 1.0)
    half = np.sqrt(((r * s) ** 2).sum(axis=1))
    c = spec.pose.translation
    return c - half, c + half


def generate_phantom(spec: PhantomSpec, geometry: GridGeometry) -> VoxelGrid:
    """Rasterize a phantom by voxel-center membership.

    A voxel is set when its center lies in the shell (outside the inner
    surface, inside or on the outer one) and above the base-cut plane, all
    evaluated in the canonical (pre-pose) frame. Isolated aliasing slivers
    (sub-voxel wedges at the base-cut edge) are dropped so the result is one
    6-connected component.
    """
    lo, hi = _posed_bbox(spec)
    glo, ghi = geometry.world_bounds()
    if (lo < glo).any() or (hi > ghi).any():
        raise OutOfBoundsError(
            f"phantom bbox [{lo}, {hi}] exits grid hull [{glo}, {ghi}]")

    inv = spec.pose.inverse()
    rinv, tinv = inv.rotation, inv.translation
    a_out = np.asarray(spec.outer_semiaxes)
    a_in = np.asarray(spec.inner_semiaxes)
    e = spec.anterior_excess
    c = spec.outer_semiaxes[2]
    zmin = -c + 2.0 * c * spec.base_cut_fraction

    wx, wy, wz = world_axis_coords(geometry)
    nx = geometry.dims[0]
    out = np.empty(geometry.dims, dtype=bool)
    for i0 in range(0, nx, _SLAB):
        i1 = min(i0 + _SLAB, nx)
        x = wx[i0:i1, None, None]
        y = wy[None, :, None]
        z = wz[None, None, :]
        qx = rinv[0, 0] * x + rinv[0, 1] * y + rinv[0, 2] * z + tinv[0]
        qy = rinv[1, 0] * x + rinv[1, 1] * y + rinv[1, 2] * z + tinv[1]
        qz = rinv[2, 0] * x + rinv[2, 1] * y + rinv[2, 2] * z + tinv[2]
        by_out = np.where(qy >= 0, a_out[1] * (1 + e), a_out[1] * (1 - e))
        by_in = by_out - spec.thickness
        e_out = (qx / a_out[0]) ** 2 + (qy / by_out) ** 2 + (qz / a_out[2]) ** 2
        e_in = (qx / a_in[0]) ** 2 + (qy / by_in) ** 2 + (qz / a_in[2]) ** 2
        out[i0:i1] = (e_out <= 1.0) & (e_in > 1.0) & (qz >= zmin)
    return largest_component(VoxelGrid(geometry, out), connectivity=6)


def fit_geometry(specs, spacing, margin_mm: float = 12.0) -> GridGeometry:
    """Shared grid containing every spec's posed phantom, centered on the
    world origin with odd dims (so the center voxel sits exactly at 0 mm)."""
    if isinstance(spacing, (int, float)):
        spacing = (float(spacing),) * 3
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for spec in specs:
        slo, shi = _posed_bbox(spec)
        lo = np.minimum(lo, slo)
        hi = np.maximum(hi, shi)
    half = np.maximum(np.abs(lo), np.abs(hi)) + margin_mm
    dims = []
    for h, s in zip(half, spacing):
        n = int(np.ceil(h / s)) * 2 + 1
        dims.append(n)
    origin = tuple(-(n - 1) * s / 2.0 for n, s in zip(dims, spacing))
    return GridGeometry(tuple(dims), spacing, origin)


def shell_volume_mm3(spec: PhantomSpec) -> float:
    """Analytic volume of the base-cut egg-shaped shell (oracle for tests).

    Uses the closed form for the volume of an ellipsoid above a z-plane,
    V(h) = pi*a*b*(2c/3 - h + h^3/(3c^2)), averaged over the two y-halves
    (the cut plane is symmetric in y, so each half contributes V/2).
    """

    def above(a, b, c, h):
        h = float(np.clip(h, -c, c))
        return np.pi * a * b * (2 * c / 3 - h + h ** 3 / (3 * c * c))

    def egg(a, b_front, b_back, c, h):
        return (above(a, b_front, c, h) + above(a, b_back, c, h)) / 2.0

    e = spec.anterior_excess
    a, b, c = spec.outer_semiaxes
    t = spec.thickness
    zmin = -c + 2.0 * c * spec.base_cut_fraction
    outer = egg(a, b * (1 + e), b * (1 - e), c, zmin)
    inner = egg(a - t, b * (1 + e) - t, b * (1 - e) - t, c - t, zmin)
    return float(outer - inner)
