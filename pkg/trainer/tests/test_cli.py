import json
import subprocess
import sys

from craniotk import fileio
from craniotk.metrics import dice


def run_trainer(args, cwd):
    return subprocess.run([sys.executable, "-m", "craniotk_trainer", *args],
                          cwd=cwd, capture_output=True, text=True)


def test_train_and_predict_with_map_back(pipeline, tmp_path):
    r = run_trainer(["train", "--manifest",
                     str(pipeline / "reg_train" / "manifest.json"),
                     "--variant", "DE-Shape", "--epochs", "2", "--lr", "1e-3",
                     "--split", "0.9", "--seed", "3",
                     "--out-dir", str(tmp_path / "run")], tmp_path)
    assert r.returncode == 0, r.stderr
    assert "best val Dice" in r.stdout
    metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert metrics["variant"] == "DE-Shape"

    reg_m = fileio.read_manifest(pipeline / "reg_eval" / "manifest.json")
    case = reg_m.cases[0]
    reg_base = str(pipeline / "reg_eval")
    out = tmp_path / "pred_original.nii.gz"
    r = run_trainer(
        ["predict", "--checkpoint", str(tmp_path / "run" / "checkpoint.pt"),
         "--defected", fileio.resolve_path(reg_base, case.paths["defected_reg"]),
         "--atlas", str(pipeline / "atlas_dir"),
         "--transform", fileio.resolve_path(reg_base, case.paths["transform"]),
         "--like", fileio.resolve_path(reg_base, case.paths["defected"]),
         "--out", str(out)], tmp_path)
    assert r.returncode == 0, r.stderr
    pred = fileio.read_volume(out)
    original = fileio.read_volume(
        fileio.resolve_path(reg_base, case.paths["defected"]))
    assert pred.same_geometry(original)  # back on the original grid
    gt = fileio.read_volume(
        fileio.resolve_path(reg_base, case.paths["defect"]))
    dice(pred, gt)  # defined: same grid, binary


def test_predict_transform_needs_like(pipeline, tmp_path):
    r = run_trainer(["predict", "--checkpoint", "x.pt", "--defected", "d.nii",
                     "--transform", "t.mat", "--out", "o.nii"], tmp_path)
    assert r.returncode == 2
