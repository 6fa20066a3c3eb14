"""Inference: probability volume thresholded at 0.5, optionally mapped back
to the original image grid through the primary CLI's map-back contract."""

import subprocess
import sys

import numpy as np
import torch
from craniotk import fileio
from craniotk.atlas import load_atlas
from craniotk.grid import VoxelGrid

from .errors import ChannelMismatchError
from .training import load_checkpoint

THRESHOLD = 0.5


def predict(checkpoint_path, defected_path, out_path, atlas_dir=None):
    """Write the binary prediction for one common-space defected volume."""
    model, config = load_checkpoint(checkpoint_path)
    defected = fileio.read_volume(defected_path)
    x = torch.from_numpy(np.ascontiguousarray(defected.data, dtype=np.float32))
    if config.channels == 2:
        if atlas_dir is None:
            raise ChannelMismatchError(
                f"{config.variant} checkpoint needs the atlas prior channel")
        prior = load_atlas(atlas_dir).binary
        if not prior.same_geometry(defected):
            raise ChannelMismatchError("atlas grid differs from input grid")
        x = torch.stack([x, torch.from_numpy(
            np.ascontiguousarray(prior.data, dtype=np.float32))])
    else:
        if atlas_dir is not None:
            raise ChannelMismatchError(
                "DE checkpoint takes a single input channel; drop --atlas")
        x = x.unsqueeze(0)
    with torch.no_grad():
        prob = model(x.unsqueeze(0))[0, 0].numpy()
    pred = VoxelGrid(defected.geom, prob >= THRESHOLD)
    fileio.write_volume(pred, out_path)
    return pred


def map_back_cli(pred_path, transform_path, like_path, out_path):
    """Return a prediction to the original grid via ``craniotk map-back``."""
    proc = subprocess.run(
        [sys.executable, "-m", "craniotk", "map-back", "--pred",
         str(pred_path), "--transform", str(transform_path), "--like",
         str(like_path), "--out", str(out_path)],
        capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"craniotk map-back failed: {proc.stderr}")
