"""Virtual craniectomy: remove a bone flap from a full skull with a randomly
placed, randomly sized template, yielding self-supervised training triplets
(full, defected, defect). Includes salt-and-pepper input augmentation.

Three template shapes are supported: sphere, cube, and "challenge" (a cube
rotated about z, unioned with two solid vertical cylinders whose axes pass
through two opposite vertical cube edges), matching the defect patterns this
pipeline targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDefectError, NoUpperSurfaceError, OutOfBoundsError
from .grid import GridGeometry, VoxelGrid, surface, world_axis_coords

TEMPLATE_KINDS = ("sphere", "cube", "challenge")

#: spec marker for organizer-style cases where the defect came with the data
PROVIDED = "provided"

_SLAB = 32


@dataclass(frozen=True)
class SizeRanges:
    """Uniform sampling ranges for template sizes (mm). Config, not ground
    truth: the real defect size distribution is unknown."""

    sphere_radius: tuple[float, float] = (10.0, 40.0)
    cube_edge: tuple[float, float] = (20.0, 60.0)
    # challenge cylinders: radius = ratio * cube edge
    cylinder_ratio: float = 0.5


@dataclass(frozen=True)
class CraniectomySpec:
    """Geometry of one simulated defect.

    ``radius_mm`` applies to spheres, ``edge_mm`` to cubes and challenge
    templates, ``cylinder_radius_mm`` and ``orientation_rad`` (rotation about
    z) to challenge templates only. Cylinder axes are perpendicular to the
    axial planes.
    """

    template: str
    center_world: tuple[float, float, float]
    radius_mm: float | None = None
    edge_mm: float | None = None
    cylinder_radius_mm: float | None = None
    orientation_rad: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.template not in TEMPLATE_KINDS:
            raise ValueError(f"unknown template kind {self.template!r}")
        center = tuple(float(v) for v in self.center_world)
        if len(center) != 3:
            raise ValueError("center_world must be a 3-vector")
        object.__setattr__(self, "center_world", center)
        if self.template == "sphere":
            if not (self.radius_mm and self.radius_mm > 0):
                raise ValueError("sphere template needs radius_mm > 0")
        else:
            if not (self.edge_mm and self.edge_mm > 0):
                raise ValueError(f"{self.template} template needs edge_mm > 0")
        if self.template == "challenge":
            if not (self.cylinder_radius_mm and self.cylinder_radius_mm > 0):
                raise ValueError("challenge template needs cylinder_radius_mm > 0")
        elif self.orientation_rad != 0.0:
            raise ValueError("orientation applies to the challenge template only")

    def to_dict(self) -> dict:
        d = {"template": self.template, "center_world": list(self.center_world)}
        for k in ("radius_mm", "edge_mm", "cylinder_radius_mm"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        if self.template == "challenge":
            d["orientation_rad"] = self.orientation_rad
        if self.seed is not None:
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CraniectomySpec":
        return cls(
            template=d["template"],
            center_world=tuple(d["center_world"]),
            radius_mm=d.get("radius_mm"),
            edge_mm=d.get("edge_mm"),
            cylinder_radius_mm=d.get("cylinder_radius_mm"),
            orientation_rad=d.get("orientation_rad", 0.0),
            seed=d.get("seed"),
        )


@dataclass(frozen=True)
class CaseTriplet:
    """(full, defected, defect) with provenance.

    Before noise injection, defected and defect partition the full skull
    exactly; ``validate`` asserts this. ``spec`` is either the simulation
    spec or the marker string "provided" for pre-defected cases.
    """

    full: VoxelGrid
    defected: VoxelGrid
    defect: VoxelGrid
    spec: CraniectomySpec | str = PROVIDED
    noise_applied: bool = False

    def validate(self):
        if not (self.full.same_geometry(self.defected)
                and self.full.same_geometry(self.defect)):
            raise ValueError("triplet grids disagree on geometry")
        if self.defect.is_empty:
            raise ValueError("defect is empty")
        if self.noise_applied:
            return  # partition only holds for the noise-free masks
        if (self.defected.data & self.defect.data).any():
            raise ValueError("defected and defect overlap")
        if not np.array_equal(self.defected.data | self.defect.data,
                              self.full.data):
            raise ValueError("defected + defect do not reassemble the full skull")


def make_template(spec: CraniectomySpec, geometry: GridGeometry) -> VoxelGrid:
    """Rasterize a solid template mask by voxel-center membership.

    Cube extents are half-open (center - e/2, center + e/2] per axis, so an
    integer-mm cube centered on a voxel center covers exactly edge^3 voxels
    on a 1 mm grid.
    """
    cx, cy, cz = spec.center_world
    wx, wy, wz = world_axis_coords(geometry)
    nx = geometry.dims[0]
    out = np.empty(geometry.dims, dtype=bool)

    if spec.template == "sphere":
        r2 = spec.radius_mm ** 2
        for i0 in range(0, nx, _SLAB):
            i1 = min(i0 + _SLAB, nx)
            dx2 = ((wx[i0:i1] - cx) ** 2)[:, None, None]
            dy2 = ((wy - cy) ** 2)[None, :, None]
            dz2 = ((wz - cz) ** 2)[None, None, :]
            out[i0:i1] = dx2 + dy2 + dz2 <= r2
    else:
        h = spec.edge_mm / 2.0
        th = spec.orientation_rad
        ct, st = np.cos(th), np.sin(th)
        zin = _half_open(wz - cz, h)[None, None, :]
        if spec.template == "cube":
            xin = _half_open(wx - cx, h)[:, None, None]
            yin = _half_open(wy - cy, h)[None, :, None]
            for i0 in range(0, nx, _SLAB):
                i1 = min(i0 + _SLAB, nx)
                out[i0:i1] = xin[i0:i1] & yin & zin
        else:  # challenge
            rc2 = spec.cylinder_radius_mm ** 2
            for i0 in range(0, nx, _SLAB):
                i1 = min(i0 + _SLAB, nx)
                dx = (wx[i0:i1] - cx)[:, None]
                dy = (wy - cy)[None, :]
                # rotate into the template frame
                u = ct * dx + st * dy
                v = -st * dx + ct * dy
                box = _half_open(u, h) & _half_open(v, h)
                cyl1 = (u - h) ** 2 + (v - h) ** 2 <= rc2
                cyl2 = (u + h) ** 2 + (v + h) ** 2 <= rc2
                out[i0:i1] = (box | cyl1 | cyl2)[:, :, None] & zin
    mask = VoxelGrid(geometry, out)
    if mask.is_empty:
        raise OutOfBoundsError("template rasterized to nothing on this grid")
    return mask


def _half_open(d, h):
    return (d > -h) & (d <= h)


def upper_surface_candidates(full: VoxelGrid, percentile: float = 60.0) -> np.ndarray:
    """Indices (N, 3) of skull-surface voxels in the upper placement region.

    "Upper" = surface voxels whose world z exceeds the given percentile of z
    over all skull voxels (calvarial placement; the percentile is the single
    tunable knob).
    """
    if full.is_empty:
        raise EmptyDefectError("skull mask is empty")
    zs = full.set_world_coords()[:, 2]
    zcut = np.percentile(zs, percentile)
    surf_idx = np.argwhere(surface(full).data)
    surf_z = full.geom.world_from_index(surf_idx)[:, 2]
    cand = surf_idx[surf_z > zcut]
    if len(cand) == 0:
        raise NoUpperSurfaceError(
            f"no surface voxels above the {percentile}th z-percentile")
    return cand


def sample_spec(full: VoxelGrid, seed: int,
                template_mix: tuple[float, float, float] | None = None,
                ranges: SizeRanges | None = None,
                upper_percentile: float = 60.0,
                candidates: np.ndarray | None = None) -> CraniectomySpec:
    """Draw one craniectomy spec: template kind from ``template_mix``
    (default: the three kinds with equal probability), center uniform over
    the upper skull surface, sizes uniform over ``ranges``.

    ``candidates`` lets callers reuse precomputed upper-surface indices when
    drawing many specs from the same skull.
    """
    mix = template_mix if template_mix is not None else (1 / 3, 1 / 3, 1 / 3)
    mix = np.asarray(mix, dtype=float)
    if mix.shape != (3,) or (mix < 0).any() or not np.isclose(mix.sum(), 1.0):
        raise ValueError("template_mix must be 3 probabilities summing to 1")
    ranges = ranges or SizeRanges()
    if candidates is None:
        candidates = upper_surface_candidates(full, upper_percentile)

    rng = np.random.default_rng(seed)
    kind = TEMPLATE_KINDS[rng.choice(3, p=mix)]
    center = tuple(full.geom.world_from_index(
        candidates[rng.integers(len(candidates))]))

    if kind == "sphere":
        return CraniectomySpec("sphere", center, seed=seed,
                               radius_mm=float(rng.uniform(*ranges.sphere_radius)))
    edge = float(rng.uniform(*ranges.cube_edge))
    if kind == "cube":
        return CraniectomySpec("cube", center, edge_mm=edge, seed=seed)
    theta = float(rng.uniform(0.0, 2.0 * np.pi))
    theta = _away_facing_orientation(full, center, edge, theta)
    return CraniectomySpec("challenge", center, edge_mm=edge,
                           cylinder_radius_mm=ranges.cylinder_ratio * edge,
                           orientation_rad=theta, seed=seed)


def _away_facing_orientation(full, center, edge, theta):
    # place the cylinder pair on the diagonal farther (in xy) from the skull
    # centroid, so the rounded corners face outward as in real flap patterns
    cen = full.centroid_world()[:2]
    h = edge / 2.0

    def pair_dist(th):
        ct, st = np.cos(th), np.sin(th)
        corner = np.array([ct * h - st * h, st * h + ct * h])
        p1 = np.asarray(center[:2]) + corner
        p2 = np.asarray(center[:2]) - corner
        return ((p1 - cen) ** 2).sum() + ((p2 - cen) ** 2).sum()

    if pair_dist(theta + np.pi / 2) > pair_dist(theta):
        theta += np.pi / 2
    return float(np.mod(theta, 2.0 * np.pi))


def apply_craniectomy(full: VoxelGrid, spec: CraniectomySpec) -> CaseTriplet:
    """Remove the bone flap: defect = full & template, defected = full \\ template.

    The returned triplet partitions the full skull exactly.
    """
    if full.is_empty:
        raise EmptyDefectError("skull mask is empty")
    template = make_template(spec, full.geom)
    defect_data = full.data & template.data
    if not defect_data.any():
        raise EmptyDefectError("template does not intersect the skull")
    triplet = CaseTriplet(
        full=full,
        defected=full.with_data(full.data & ~template.data),
        defect=full.with_data(defect_data),
        spec=spec,
    )
    triplet.validate()
    return triplet


def salt_pepper(m: VoxelGrid, p: float, seed: int) -> VoxelGrid:
    """Flip each voxel independently with probability ``p`` (deterministic
    per seed). Applied to model inputs only, never to ground-truth defects."""
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must be a probability")
    if p == 0.0:
        return m.with_data(m.data)
    rng = np.random.default_rng(seed)
    flips = rng.random(m.dims, dtype=np.float32) < p
    return m.with_data(m.data ^ flips)
