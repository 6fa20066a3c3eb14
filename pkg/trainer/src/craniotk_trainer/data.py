"""Load training triplets from a craniotk `register --export-training`
manifest: common-space defected/defect volumes plus the atlas prior.

The trainer talks to the primary pipeline only through its published file
formats (NIfTI-subset volumes, JSON manifests, the atlas directory)."""

import os
from dataclasses import dataclass

import numpy as np
import torch
from craniotk import fileio
from craniotk.atlas import load_atlas

from .errors import ChannelMismatchError


@dataclass
class Case:
    case_id: str
    subset: str
    inputs: torch.Tensor   # (C, D, H, W) float32
    target: torch.Tensor   # (1, D, H, W) float32


def _to_tensor(grid):
    return torch.from_numpy(np.ascontiguousarray(grid.data, dtype=np.float32))


def load_cases(manifest_path, channels: int, atlas_dir=None) -> list[Case]:
    """Read every case with common-space volumes. ``channels`` = 1 loads the
    defected mask only; 2 stacks the atlas binary as a constant prior channel
    (atlas taken from the manifest unless ``atlas_dir`` overrides it)."""
    manifest = fileio.read_manifest(manifest_path, check_paths=True)
    base = os.path.dirname(os.path.abspath(manifest_path))
    if channels not in (1, 2):
        raise ChannelMismatchError(f"channels must be 1 or 2, got {channels}")
    prior = None
    if channels == 2:
        if atlas_dir is None:
            if manifest.atlas is None:
                raise ChannelMismatchError(
                    "manifest has no atlas path; export with --export-training "
                    "or pass an atlas directory")
            atlas_dir = fileio.resolve_path(base, manifest.atlas)
        prior = _to_tensor(load_atlas(atlas_dir).binary)

    cases = []
    for entry in manifest.cases:
        if "defected_reg" not in entry.paths or "defect_reg" not in entry.paths:
            raise ChannelMismatchError(
                f"{entry.case_id}: manifest lacks common-space volumes "
                "(run craniotk register first)")
        defected = _to_tensor(fileio.read_volume(
            fileio.resolve_path(base, entry.paths["defected_reg"])))
        target = _to_tensor(fileio.read_volume(
            fileio.resolve_path(base, entry.paths["defect_reg"])))
        if prior is not None:
            if prior.shape != defected.shape:
                raise ChannelMismatchError(
                    f"{entry.case_id}: atlas grid {tuple(prior.shape)} != "
                    f"case grid {tuple(defected.shape)}")
            inputs = torch.stack([defected, prior])
        else:
            inputs = defected.unsqueeze(0)
        cases.append(Case(entry.case_id, entry.subset, inputs,
                          target.unsqueeze(0)))
    return cases


def split_cases(cases, train_fraction: float):
    """Deterministic 95/5-style split: the tail of the manifest order is the
    validation fold (at least one case each side)."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if len(cases) < 2:
        return list(cases), list(cases)  # single-case smoke: val == train
    n_val = max(1, int(round(len(cases) * (1 - train_fraction))))
    n_val = min(n_val, len(cases) - 1)
    return list(cases[:-n_val]), list(cases[-n_val:])
