"""Full-skull atlas: the mean of rigidly aligned full skulls, thresholded.

The atlas defines the common space every case is registered into and doubles
as the shape prior fed to the trainer as a second input channel.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .errors import AtlasBuildError, GeometryMismatchError, IoFailureError
from .grid import (GridGeometry, ScalarGrid, VoxelGrid, largest_component,
                   threshold)
from .registration import (RegistrationOptions, canonical_orientation,
                           register_rigid, resample)
from .transforms import RigidTransform, common_grid

DEFAULT_THRESHOLD = 0.5
DEFAULT_ITERATIONS = 2


@dataclass
class Atlas:
    """Mean occupancy in [0, 1] plus its thresholded binary shape.

    The binary mask is the largest 6-connected component of
    ``threshold(average, threshold)``: averaging slightly misaligned shells
    leaves isolated voxels right at the threshold, and the prior must be a
    single clean shape. ``mean_dice_history`` records, per refinement round,
    the mean Dice between the round's binary atlas and the registered inputs.
    """

    average: ScalarGrid
    binary: VoxelGrid
    threshold: float
    provenance: list[str] = field(default_factory=list)
    mean_dice_history: list[float] = field(default_factory=list)

    @property
    def grid(self) -> GridGeometry:
        return self.average.geom

    def validate(self):
        if not self.average.same_geometry(self.binary):
            raise ValueError("average and binary grids differ")
        if self.average.data.min() < 0 or self.average.data.max() > 1:
            raise ValueError("average occupancy must lie in [0, 1]")
        expect = largest_component(threshold(self.average, self.threshold), 6)
        if not np.array_equal(expect.data, self.binary.data):
            raise ValueError(
                "binary mask is not the thresholded average's main component")


def _dice(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    size = np.count_nonzero(a) + np.count_nonzero(b)
    return 1.0 if size == 0 else 2.0 * inter / size


def build_atlas(fulls, t: float = DEFAULT_THRESHOLD,
                iterations: int = DEFAULT_ITERATIONS,
                grid: GridGeometry | None = None,
                case_ids=None,
                reg_opts: RegistrationOptions | None = None,
                workers: int = 1) -> Atlas:
    """Iteratively build the atlas from full-skull masks.

    Round 0 registers every input to the first input (pre-placed on the
    common grid by centering its centroid); each later round registers to the
    previous round's thresholded mean. Per-case registration failures are
    tolerated up to 50%.
    """
    fulls = list(fulls)
    if len(fulls) < 2:
        raise AtlasBuildError("need at least 2 full skulls")
    if any(m.is_empty for m in fulls):
        raise AtlasBuildError("empty input mask")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    grid = grid or common_grid()
    ids = list(case_ids) if case_ids is not None else \
        [f"case_{i:04d}" for i in range(len(fulls))]

    # round-0 reference: the first input, pose-canonicalized onto the grid
    # (mid-sagittal plane on the grid mid-plane, centroid at the grid center)
    rot = canonical_orientation(fulls[0])
    c0 = fulls[0].centroid_world()
    place = RigidTransform.from_parts(
        rot, np.asarray(grid.center_world) - rot @ c0)
    reference = resample(fulls[0], place, grid, interp="trilinear")

    mean = None
    history = []
    used_ids = ids
    for _ in range(iterations):
        failures = []

        def _one(args):
            i, m = args
            try:
                tr = register_rigid(m, reference, reg_opts)
                return i, resample(m, tr, grid, interp="trilinear")
            except Exception as exc:  # registration failure for this case
                return i, exc

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_one, enumerate(fulls)))
        else:
            results = [_one(x) for x in enumerate(fulls)]

        aligned = []
        used_ids = []
        for i, res in results:
            if isinstance(res, Exception):
                failures.append((ids[i], res))
            else:
                aligned.append(res)
                used_ids.append(ids[i])
        if len(failures) * 2 > len(fulls):
            detail = "; ".join(f"{cid}: {exc}" for cid, exc in failures)
            raise AtlasBuildError(f"registration failed for more than half "
                                  f"the cases: {detail}")

        acc = np.zeros(grid.dims, dtype=np.float64)
        for m in aligned:
            acc += m.data
        acc /= len(aligned)
        mean = ScalarGrid(grid, acc)
        reference = largest_component(threshold(mean, t), connectivity=6)
        history.append(float(np.mean([_dice(reference.data, m.data)
                                      for m in aligned])))

    atlas = Atlas(average=mean, binary=reference, threshold=float(t),
                  provenance=used_ids, mean_dice_history=history)
    atlas.validate()
    return atlas


def prior_channel(defected_registered: VoxelGrid, atlas: Atlas
                  ) -> tuple[VoxelGrid, VoxelGrid]:
    """Channel pair for the shape-prior model: (defected mask, atlas binary).

    Both must already live on the common grid; the prior channel is the same
    atlas for every case.
    """
    if not defected_registered.same_geometry(atlas.binary):
        raise GeometryMismatchError(
            f"case grid {defected_registered.geom} != atlas grid {atlas.grid}")
    return defected_registered, atlas.binary


# ---------------------------------------------------------------------------
# Persistence: two volumes + a human-readable sidecar
# ---------------------------------------------------------------------------

AVERAGE_FILE = "atlas_average.nii.gz"
BINARY_FILE = "atlas_binary.nii.gz"
META_FILE = "atlas.meta"


def save_atlas(atlas: Atlas, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    fileio.write_scalar_volume(atlas.average, os.path.join(out_dir, AVERAGE_FILE))
    fileio.write_volume(atlas.binary, os.path.join(out_dir, BINARY_FILE))
    g = atlas.grid
    lines = [
        "format: craniotk-atlas/1",
        f"threshold: {atlas.threshold:.17g}",
        f"dims: {g.dims[0]} {g.dims[1]} {g.dims[2]}",
        "spacing: " + " ".join(f"{s:.17g}" for s in g.spacing),
        "origin: " + " ".join(f"{o:.17g}" for o in g.origin),
        "cases: " + ",".join(atlas.provenance),
        "mean_dice_history: " + " ".join(f"{d:.6f}"
                                         for d in atlas.mean_dice_history),
    ]
    with open(os.path.join(out_dir, META_FILE), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_atlas(atlas_dir) -> Atlas:
    meta_path = os.path.join(atlas_dir, META_FILE)
    try:
        with open(meta_path) as f:
            raw = f.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read {meta_path}: {exc}") from exc
    meta = {}
    for line in raw.splitlines():
        if line.strip():
            key, _, value = line.partition(":")
            meta[key.strip()] = value.strip()
    if meta.get("format") != "craniotk-atlas/1":
        raise IoFailureError(f"{meta_path}: unknown atlas format "
                                    f"{meta.get('format')!r}")
    average = fileio.read_scalar_volume(os.path.join(atlas_dir, AVERAGE_FILE))
    binary = fileio.read_volume(os.path.join(atlas_dir, BINARY_FILE))
    history = [float(v) for v in meta.get("mean_dice_history", "").split()]
    cases = [c for c in meta.get("cases", "").split(",") if c]
    atlas = Atlas(average=average, binary=binary,
                  threshold=float(meta["threshold"]),
                  provenance=cases, mean_dice_history=history)
    atlas.validate()
    return atlas
