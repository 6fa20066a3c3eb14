import subprocess
import sys

import numpy as np
import pytest
import torch

from craniotk.craniectomy import CraniectomySpec, make_template
from craniotk.grid import intersect, subtract
from craniotk.phantom import PhantomSpec, generate_phantom
from craniotk.transforms import common_grid


def toy_triplet(dims=(32, 32, 32), spacing=(3.0, 3.5, 3.0)):
    """Small in-memory skull triplet for overfit/shape tests."""
    grid = common_grid(dims=dims, spacing=spacing)
    spec = PhantomSpec(outer_semiaxes=(35, 45, 32), thickness=8.0)
    full = generate_phantom(spec, grid)
    idx = np.argwhere(full.data)
    crown = idx[np.argmax(idx[:, 2])]
    center = tuple(grid.world_from_index(crown))
    tmpl = make_template(CraniectomySpec("sphere", center, radius_mm=18.0),
                         grid)
    return full, subtract(full, tmpl), intersect(full, tmpl)


def as_batch(mask):
    return torch.from_numpy(mask.data.astype(np.float32))[None, None]


def run_craniotk(args, cwd):
    r = subprocess.run([sys.executable, "-m", "craniotk", *args], cwd=cwd,
                       capture_output=True, text=True)
    assert r.returncode == 0, f"craniotk {args}: {r.stderr}"


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Toy dataset exported by the primary CLI: atlas, registered training
    and held-out evaluation triplets, and the atlas-subtract baseline."""
    d = tmp_path_factory.mktemp("pipeline")
    run_craniotk(["phantom", "--n", "5", "--seed", "50", "--spacing", "2.5",
                  "--jitter", "0.2", "--out-dir", "atlas_pop",
                  "--subset", "train"], d)
    run_craniotk(["phantom", "--n", "14", "--seed", "51", "--spacing", "2.5",
                  "--jitter", "0.2", "--out-dir", "train_pop",
                  "--subset", "train"], d)
    run_craniotk(["phantom", "--n", "6", "--seed", "52", "--spacing", "2.5",
                  "--jitter", "0.2", "--out-dir", "eval_pop",
                  "--subset", "test"], d)
    run_craniotk(["craniectomy", "--manifest", "train_pop/manifest.json",
                  "--seed", "8", "--out-dir", "train_def"], d)
    run_craniotk(["craniectomy", "--manifest", "eval_pop/manifest.json",
                  "--seed", "9", "--out-dir", "eval_def"], d)
    run_craniotk(["atlas", "--manifest", "atlas_pop/manifest.json",
                  "--grid-dims", "40,44,32", "--grid-spacing", "5",
                  "--out", "atlas_dir"], d)
    run_craniotk(["register", "--manifest", "train_def/manifest.json",
                  "--atlas", "atlas_dir", "--export-training",
                  "--out-dir", "reg_train"], d)
    run_craniotk(["register", "--manifest", "eval_def/manifest.json",
                  "--atlas", "atlas_dir", "--export-training",
                  "--out-dir", "reg_eval"], d)
    run_craniotk(["reconstruct", "--method", "atlas-sub", "--manifest",
                  "reg_eval/manifest.json", "--atlas", "atlas_dir",
                  "--out-dir", "base_pred"], d)
    return d
