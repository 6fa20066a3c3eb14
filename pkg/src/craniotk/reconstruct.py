"""Classical implant estimators on the common grid.

Two non-learned baselines: reconstruct-and-subtract with the atlas standing
in for the full skull, and mid-sagittal mirroring. Both share a defect
postprocessing chain that suppresses far-from-flap noise (the known weakness
of subtraction strategies).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from scipy import ndimage

from .atlas import Atlas
from .errors import EmptyPredictionWarning, GeometryMismatchError
from .grid import VoxelGrid, largest_component, morph, subtract
from .transforms import RigidTransform


@dataclass(frozen=True)
class PostprocessOptions:
    """Close radius fills subtraction speckle; the distance gate drops voxels
    farther than ``max_distance_mm`` from the defected skull (so predictions
    hug the actual hole). Both are config, not ground truth; gates below the
    flap half-width will trim large implants."""

    close_radius_mm: float = 1.5
    max_distance_mm: float = 10.0


def postprocess(raw: VoxelGrid, defected: VoxelGrid | None = None,
                opts: PostprocessOptions | None = None) -> VoxelGrid:
    """Morphological close -> largest 26-connected component -> distance gate
    against the defected skull (skipped when ``defected`` is None)."""
    opts = opts or PostprocessOptions()
    if raw.is_empty:
        return raw.with_data(raw.data)
    out = morph(raw, "close", opts.close_radius_mm)
    out = largest_component(out, connectivity=26)
    if defected is not None and not defected.is_empty:
        if not raw.same_geometry(defected):
            raise GeometryMismatchError("raw and defected grids differ")
        dist = ndimage.distance_transform_edt(~defected.data,
                                              sampling=raw.spacing)
        out = out.with_data(out.data & (dist <= opts.max_distance_mm))
    return out


def atlas_subtract(defected: VoxelGrid, atlas: Atlas,
                   transform: RigidTransform | None = None,
                   opts: PostprocessOptions | None = None) -> VoxelGrid:
    """Reconstruct-and-subtract baseline: Y_hat = postprocess(atlas \\ defected).

    ``defected`` must already be registered onto the atlas grid (``transform``
    is accepted for provenance only). Emits :class:`EmptyPredictionWarning`
    when nothing is left after postprocessing.
    """
    if not defected.same_geometry(atlas.binary):
        raise GeometryMismatchError(
            f"defected grid {defected.geom} != atlas grid {atlas.grid}")
    raw = subtract(atlas.binary, defected)
    pred = postprocess(raw, defected, opts)
    pred = subtract(pred, defected)  # an implant never overlaps existing bone
    if pred.is_empty:
        warnings.warn("atlas subtraction produced an empty prediction",
                      EmptyPredictionWarning)
    return pred


def mirror_x(m: VoxelGrid) -> VoxelGrid:
    """Mirror about the grid mid-plane x = (nx - 1) / 2 (index space)."""
    return m.with_data(m.data[::-1, :, :])


def mirror_reconstruct(defected: VoxelGrid,
                       opts: PostprocessOptions | None = None) -> VoxelGrid:
    """Mirroring baseline: backfill from the contralateral side.

    Assumes the mid-sagittal plane is the common-grid mid-plane (registration
    has already canonicalized pose). Bilateral symmetric defects subtract to
    (near) nothing; that failure mode is inherent to the strategy.
    """
    raw = subtract(mirror_x(defected), defected)
    pred = postprocess(raw, defected, opts)
    pred = subtract(pred, defected)
    if pred.is_empty:
        warnings.warn("mirroring produced an empty prediction",
                      EmptyPredictionWarning)
    return pred
