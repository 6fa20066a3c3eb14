"""Rigid mask-to-atlas registration, common-grid resampling, and map-back.

The similarity objective is the negative mean absolute difference of clamped
signed distance transforms over a band around the fixed surface; it is smooth,
has a wide basin, and the band clamp keeps it robust to missing bone flaps.
Optimization is derivative-free simplex search over 6 pose parameters (3 Euler
angles, 3 translations), initialized by centroid + principal-axes moments and
run through a 3-level multi-resolution pyramid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import kernels
from .errors import EmptyInputError, NonConvergenceWarning
from .grid import GridGeometry, ScalarGrid, VoxelGrid, signed_distance
from .transforms import RigidTransform, euler_matrix


@dataclass(frozen=True)
class RegistrationOptions:
    band_mm: float = 20.0
    pyramid: tuple[int, ...] = (4, 2, 1)
    max_iter: int = 200           # simplex iterations per pyramid level
    ftol: float = 1e-5            # stop when simplex objective spread < ftol
    point_budget: int = 80_000    # band points per level (strided subsample)
    moment_init: bool = True      # principal-axes rotation candidates
    # per-level initial simplex steps, keyed by pyramid factor
    angle_step_rad: dict = field(default_factory=lambda: {4: 0.12, 2: 0.05, 1: 0.02})
    trans_step_mm: dict = field(default_factory=lambda: {4: 8.0, 2: 3.0, 1: 1.0})


@dataclass
class RegistrationResult:
    transform: RigidTransform
    objective_init: float      # similarity of the moment initialization
    objective_final: float     # similarity of the returned transform
    converged: bool
    n_evaluations: int


def block_max_downsample(m: VoxelGrid, factor: int) -> VoxelGrid:
    """Coarsen a mask by taking the max over factor^3 blocks (keeps thin
    shells connected, unlike strided subsampling)."""
    if factor == 1:
        return m
    nx, ny, nz = m.dims
    pad = [(0, (-d) % factor) for d in m.dims]
    data = np.pad(m.data, pad, mode="constant")
    px, py, pz = data.shape
    data = data.reshape(px // factor, factor, py // factor, factor,
                        pz // factor, factor).any(axis=(1, 3, 5))
    spacing = tuple(s * factor for s in m.spacing)
    # block (0,0,0) covers voxels 0..factor-1; its center sits half a block in
    origin = tuple(o + (factor - 1) / 2.0 * s
                   for o, s in zip(m.origin, m.spacing))
    return VoxelGrid(GridGeometry(data.shape, spacing, origin), data)


class _Level:
    """Precomputed similarity context for one pyramid level."""

    def __init__(self, moving: VoxelGrid, fixed: VoxelGrid, band: float,
                 budget: int):
        sdt_m = np.clip(signed_distance(moving).data, -band, band)
        self.sdt_m = sdt_m.astype(np.float32)
        self.m_origin = np.asarray(moving.origin)
        self.m_spacing = np.asarray(moving.spacing)
        sdt_f = np.clip(signed_distance(fixed).data, -band, band)
        band_idx = np.argwhere(np.abs(sdt_f) < band)
        if len(band_idx) > budget:
            stride = int(np.ceil(len(band_idx) / budget))
            band_idx = band_idx[::stride]
        self.pts = fixed.geom.world_from_index(band_idx)
        self.vals = sdt_f[tuple(band_idx.T)].astype(np.float64)
        self.band = band

    def cost(self, rotation: np.ndarray, translation: np.ndarray) -> float:
        """Mean |SDT difference| over the band; lower is better."""
        q = (self.pts - translation) @ rotation  # rotation.T applied
        idx = (q - self.m_origin) / self.m_spacing
        s = kernels.sample_points_trilinear(self.sdt_m, idx, fill=self.band)
        return float(np.abs(s - self.vals).mean())


def _principal_axes(m: VoxelGrid) -> np.ndarray:
    pts = m.set_world_coords()
    cov = np.cov((pts - pts.mean(axis=0)).T)
    _, vec = np.linalg.eigh(cov)
    return vec[:, ::-1]  # columns sorted by descending variance


def canonical_orientation(m: VoxelGrid) -> np.ndarray:
    """Deterministic rotation taking the mask to a canonical head frame.

    Principal axes are mapped by descending variance to y (longest: a skull's
    anterior-posterior axis), then x (left-right), then z. Axis signs are
    fixed by the third central moment (positive skew points positive); the
    most symmetric axis takes whatever sign makes the rotation proper. The
    result puts a head's mid-sagittal plane on the grid's x mid-plane, which
    the mirroring baseline relies on.
    """
    pts = m.set_world_coords()
    centered = pts - pts.mean(axis=0)
    axes = _principal_axes(m)            # columns: variance-descending
    world_cols = axes[:, [1, 0, 2]]      # canonical x, y, z directions
    skews = np.array([np.mean((centered @ world_cols[:, i]) ** 3)
                      for i in range(3)])
    signs = np.where(skews < 0, -1.0, 1.0)
    world_cols = world_cols * signs
    if np.linalg.det(world_cols) < 0:
        flip = int(np.argmin(np.abs(skews)))
        world_cols[:, flip] *= -1
    return world_cols.T                  # world -> canonical


def _rotation_candidates(moving, fixed) -> list[np.ndarray]:
    """Identity plus proper rotations aligning principal axes (the four
    sign assignments with determinant +1)."""
    cands = [np.eye(3)]
    vm = _principal_axes(moving)
    vf = _principal_axes(fixed)
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        signs = np.array([sx, sy, 1.0])
        r = (vf * signs) @ vm.T
        if np.linalg.det(r) < 0:
            r = (vf * (signs * np.array([1.0, 1.0, -1.0]))) @ vm.T
        cands.append(r)
    return cands


def _pose(x, r0, c_m, c_f):
    """x = (rx, ry, rz, tx, ty, tz) around the moment initialization."""
    r = euler_matrix(*x[:3]) @ r0
    t = c_f + x[3:6] - r @ c_m
    return r, t


def register_rigid(moving: VoxelGrid, fixed: VoxelGrid,
                   opts: RegistrationOptions | None = None,
                   full_output: bool = False):
    """Find the rigid transform T maximizing mask similarity, moving -> fixed.

    Returns a :class:`RigidTransform` (or a :class:`RegistrationResult` when
    ``full_output``). The returned transform never scores worse than the
    moment-based initialization; hitting the iteration cap while still
    improving raises :class:`NonConvergenceWarning` and returns best-so-far.
    """
    if moving.is_empty or fixed.is_empty:
        raise EmptyInputError("registration requires two nonempty masks")
    opts = opts or RegistrationOptions()
    factors = tuple(sorted(set(opts.pyramid), reverse=True))
    levels = {}
    for f in factors:
        levels[f] = _Level(block_max_downsample(moving, f),
                           block_max_downsample(fixed, f),
                           opts.band_mm, opts.point_budget)

    c_m = moving.centroid_world()
    c_f = fixed.centroid_world()
    coarse = levels[factors[0]]

    if opts.moment_init:
        cands = _rotation_candidates(moving, fixed)
        costs = [coarse.cost(*_pose(np.zeros(6), r, c_m, c_f)) for r in cands]
        r0 = cands[int(np.argmin(costs))]
    else:
        r0 = np.eye(3)

    x = np.zeros(6)
    n_eval = 0
    converged = True
    for f in factors:
        lvl = levels[f]

        def cost_x(xv, _lvl=lvl):
            return _lvl.cost(*_pose(xv, r0, c_m, c_f))

        astep = opts.angle_step_rad.get(f, 0.02 * f)
        tstep = opts.trans_step_mm.get(f, 1.0 * f)
        simplex = np.vstack([x] * 7)
        for d in range(6):
            simplex[d + 1, d] += astep if d < 3 else tstep
        res = optimize.minimize(
            cost_x, x, method="Nelder-Mead",
            options={"maxiter": opts.max_iter, "maxfev": 6 * opts.max_iter,
                     "fatol": opts.ftol, "xatol": 1e12,
                     "initial_simplex": simplex})
        x = res.x
        n_eval += res.nfev
        if f == factors[-1] and not res.success:
            _, fsim = res.final_simplex
            still_improving = np.max(np.abs(fsim[1:] - fsim[0])) > opts.ftol
            converged = not still_improving

    fine = levels[factors[-1]]
    cost_init = fine.cost(*_pose(np.zeros(6), r0, c_m, c_f))
    cost_final = fine.cost(*_pose(x, r0, c_m, c_f))
    if cost_final > cost_init:
        x = np.zeros(6)
        cost_final = cost_init
    if not converged:
        warnings.warn("iteration cap hit with the objective still improving; "
                      "returning best-so-far transform", NonConvergenceWarning)

    r, t = _pose(x, r0, c_m, c_f)
    transform = RigidTransform.from_parts(r, t)
    if full_output:
        return RegistrationResult(
            transform=transform,
            objective_init=-cost_init,
            objective_final=-cost_final,
            converged=converged,
            n_evaluations=n_eval,
        )
    return transform


def _index_affine(source: GridGeometry, transform: RigidTransform,
                  target: GridGeometry) -> np.ndarray:
    """3x4 map: target voxel index -> source fractional index, through
    world space via transform^-1."""
    a = np.linalg.inv(source.affine) @ transform.inverse().matrix @ target.affine
    return a[:3, :]


def resample(m: VoxelGrid, transform: RigidTransform, target: GridGeometry,
             interp: str = "trilinear") -> VoxelGrid:
    """Resample a mask onto ``target``: output voxel v takes the value of the
    input at transform^-1(world(v)). ``interp`` is ``nearest`` or
    ``trilinear`` (trilinear-then-threshold at 0.5). Out-of-field samples are
    background.
    """
    mat = _index_affine(m.geom, transform, target)
    if interp == "nearest":
        out = kernels.affine_sample_nearest(
            m.data.view(np.uint8), mat, target.dims)
        return VoxelGrid(target, out.astype(bool))
    if interp == "trilinear":
        out = kernels.affine_sample_trilinear(
            m.data.astype(np.float32), mat, target.dims, 0.0)
        return VoxelGrid(target, out >= 0.5)
    raise ValueError(f"unknown interpolation {interp!r}")


def resample_scalar(g: ScalarGrid, transform: RigidTransform,
                    target: GridGeometry, fill: float = 0.0) -> ScalarGrid:
    mat = _index_affine(g.geom, transform, target)
    out = kernels.affine_sample_trilinear(
        g.data.astype(np.float32), mat, target.dims, fill)
    return ScalarGrid(target, out)


def map_back(pred: VoxelGrid, transform: RigidTransform,
             original_geometry: GridGeometry) -> VoxelGrid:
    """Bring a common-space prediction back to the original image grid by
    applying the inverse transform (nearest-neighbor, so output stays binary).
    """
    return resample(pred, transform.inverse(), original_geometry,
                    interp="nearest")
