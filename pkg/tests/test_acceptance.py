"""Acceptance suite: one test per acceptance criterion, each printing a
PASS line with its measurements. Run with ``pytest tests/test_acceptance.py
-v -s``. Criteria are property-based plus frozen regression bounds on
synthetic phantoms; no external data or GPU is involved.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from craniotk import fileio
from craniotk.atlas import build_atlas
from craniotk.craniectomy import (CraniectomySpec, apply_craniectomy,
                                  make_template, salt_pepper, sample_spec,
                                  upper_surface_candidates)
from craniotk.errors import (BadMagicError, NonOrthogonalOrientationError,
                             TruncatedError, UnsupportedDatatypeError)
from craniotk.grid import GridGeometry, VoxelGrid, intersect, subtract, union, xor
from craniotk.metrics import dice, hausdorff, report_from_json
from craniotk.phantom import (PhantomSpec, PopulationVariability,
                              fit_geometry, generate_phantom,
                              sample_population)
from craniotk.reconstruct import atlas_subtract, mirror_reconstruct, mirror_x
from craniotk.registration import map_back, register_rigid, resample
from craniotk.transforms import (RigidTransform, common_grid,
                                 transform_discrepancy)
from conftest import random_mask
from oracles import brute_dice, brute_hausdorff


def report(name, detail, elapsed, limit=None):
    extra = f" ({elapsed:.1f} s" + (f" < {limit:.0f} s)" if limit else ")")
    print(f"\n[PASS] {name}: {detail}{extra}")
    if limit is not None:
        assert elapsed < limit, f"{name} exceeded runtime limit"


def test_craniectomy_conservation_200_cases():
    t0 = time.time()
    specs = sample_population(200, 1234, PopulationVariability().scaled(0.6))
    geom = fit_geometry(specs, 2.5, margin_mm=15)
    exact = 0
    for i, spec in enumerate(specs):
        full = generate_phantom(spec, geom)
        cspec = sample_spec(full, seed=int(1000 + i))
        triplet = apply_craniectomy(full, cspec)
        defected = salt_pepper(triplet.defected, 0.0, seed=i)  # noise-p 0
        assert defected.equals(triplet.defected)
        if xor(xor(defected, triplet.defect), full).is_empty:
            exact += 1
    assert exact == 200
    report("craniectomy conservation", f"{exact}/200 cases partition exactly",
           time.time() - t0, limit=60)


def test_template_mix_frequencies():
    t0 = time.time()
    spec = PhantomSpec()
    geom = fit_geometry([spec], 2.5)
    full = generate_phantom(spec, geom)
    cand = upper_surface_candidates(full)
    kinds = [sample_spec(full, seed, candidates=cand).template
             for seed in range(3000)]
    freqs = {k: kinds.count(k) / 3000 for k in ("sphere", "cube", "challenge")}
    for kind, freq in freqs.items():
        assert 0.30 <= freq <= 0.37, f"{kind} frequency {freq}"
    detail = ", ".join(f"{k}={v:.3f}" for k, v in freqs.items())
    report("template mix", f"3000 draws, {detail} all in [0.30, 0.37]",
           time.time() - t0)


def test_metric_oracle_equivalence_100_masks():
    t0 = time.time()
    rng = np.random.default_rng(77)
    checked = 0
    worst = 0.0
    while checked < 100:
        dims = tuple(int(d) for d in rng.integers(3, 13, 3))
        spacing = tuple(float(s) for s in rng.choice([0.5, 1.0, 1.5, 2.0], 3))
        a = random_mask(rng, dims, 0.35, spacing)
        b = random_mask(rng, dims, 0.35, spacing)
        if a.is_empty or b.is_empty or a.is_full or b.is_full:
            continue
        for pct in (100, 95):
            got = hausdorff(a, b, percentile=pct)
            want = brute_hausdorff(a.data, b.data, spacing, pct)
            worst = max(worst, abs(got - want))
            assert abs(got - want) <= 1e-9
        d_err = abs(dice(a, b) - brute_dice(a.data, b.data))
        worst = max(worst, d_err)
        assert d_err <= 1e-9
        checked += 1
    report("metric oracle equivalence",
           f"{checked} masks, max |impl - brute force| = {worst:.2e} <= 1e-9",
           time.time() - t0, limit=60)


def test_registration_recovery_50_cases():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    specs = sample_population(50, 555, PopulationVariability(
        semiaxes_std_mm=2.0, thickness_std_mm=0.4,
        rotation_std_deg=0.0, translation_std_mm=0.0))
    hits = 0
    never_worse = 0
    worst = (0.0, 0.0)
    for spec in specs:
        angle = rng.uniform(0, np.radians(20))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        rot = Rotation.from_rotvec(angle * axis).as_matrix()
        tvec = rng.normal(size=3)
        tvec *= rng.uniform(0, 15) / np.linalg.norm(tvec)
        t_true = RigidTransform.from_parts(rot, tvec)

        fixed_geom = fit_geometry([spec], 2.0, margin_mm=12)
        fixed = generate_phantom(spec, fixed_geom)
        moved_spec = PhantomSpec(spec.outer_semiaxes, spec.thickness,
                                 pose=t_true.compose(spec.pose), seed=spec.seed)
        moving_geom = fit_geometry([moved_spec], 2.0, margin_mm=12)
        moving = generate_phantom(moved_spec, moving_geom)

        res = register_rigid(moving, fixed, full_output=True)
        deg, mm = transform_discrepancy(res.transform, t_true.inverse(),
                                        at_point=fixed.centroid_world())
        if deg <= 2.0 and mm <= 2.0:
            hits += 1
        worst = max(worst, (deg, mm))
        if res.objective_final >= res.objective_init:
            never_worse += 1
    elapsed = time.time() - t0
    assert hits >= 45, f"only {hits}/50 within 2 deg / 2 mm"
    assert never_worse == 50
    report("registration recovery",
           f"{hits}/50 within 2 deg / 2 mm (worst {worst[0]:.2f} deg, "
           f"{worst[1]:.2f} mm); objective >= init in {never_worse}/50",
           elapsed, limit=600)


def test_transform_roundtrip_dice():
    t0 = time.time()
    spec = PhantomSpec()
    geom = fit_geometry([spec], 1.0)
    full = generate_phantom(spec, geom)
    cand = upper_surface_candidates(full)
    cspec = sample_spec(full, seed=42, template_mix=(1, 0, 0), candidates=cand)
    triplet = apply_craniectomy(full, cspec)
    grid = common_grid()
    t = RigidTransform.from_euler(rx=np.radians(6), rz=np.radians(9),
                                  translation=(7.0, -4.0, 5.0))
    fwd = resample(triplet.defect, t, grid, interp="trilinear")
    back = map_back(fwd, t, geom)
    d = dice(back, triplet.defect)
    assert d >= 0.90
    report("T / T^-1 round trip",
           f"forward-resample + map-back Dice {d:.4f} >= 0.90 on 1 mm phantom",
           time.time() - t0)


@pytest.fixture(scope="module")
def acceptance_atlas():
    specs = sample_population(5, 33, PopulationVariability().scaled(0.1))
    geom = fit_geometry(specs, 2.0, margin_mm=20)
    fulls = [generate_phantom(s, geom) for s in specs]
    grid = common_grid(dims=(88, 88, 72), spacing=(2.0, 2.0, 2.0))
    return build_atlas(fulls, grid=grid, workers=2)


def test_atlas_subtract_exactness(acceptance_atlas):
    t0 = time.time()
    atlas = acceptance_atlas
    idx = np.argwhere(atlas.binary.data)
    crown = idx[np.argmax(idx[:, 2])]
    center = tuple(atlas.grid.world_from_index(crown))
    tmpl = make_template(CraniectomySpec("sphere", center, radius_mm=8.0),
                         atlas.grid)
    flap = intersect(atlas.binary, tmpl)
    defected = subtract(atlas.binary, tmpl)
    pred = atlas_subtract(defected, atlas, transform=RigidTransform.identity())
    d = dice(pred, flap)
    assert d >= 0.99
    report("atlas-subtract exactness",
           f"T = identity recovery Dice {d:.4f} >= 0.99", time.time() - t0)


def test_mirror_baseline():
    t0 = time.time()
    spec = PhantomSpec()
    geom = fit_geometry([spec], 1.0)
    full = generate_phantom(spec, geom)
    idx = np.argwhere(full.data)
    upper = idx[idx[:, 2] > np.percentile(idx[:, 2], 75)]
    pick = upper[np.argmax(upper[:, 0])]
    center = tuple(geom.world_from_index(pick))
    tmpl = make_template(CraniectomySpec("sphere", center, radius_mm=12.0),
                         geom)

    defected = subtract(full, tmpl)
    flap = intersect(full, tmpl)
    d_uni = dice(mirror_reconstruct(defected), flap)
    assert d_uni >= 0.90

    both = union(tmpl, mirror_x(tmpl))
    defected_bi = subtract(full, both)
    defect_bi = intersect(full, both)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pred_bi = mirror_reconstruct(defected_bi)
    frac = pred_bi.count / defect_bi.count
    assert frac < 0.05
    report("mirror baseline",
           f"unilateral Dice {d_uni:.4f} >= 0.90; bilateral prediction "
           f"volume {100 * frac:.2f}% < 5% of true defect", time.time() - t0)


def test_io_roundtrips_and_rejections(tmp_path):
    t0 = time.time()
    rng = np.random.default_rng(4321)
    for i in range(100):
        dims = tuple(int(d) for d in rng.integers(2, 14, 3))
        spacing = tuple(float(np.float32(s))
                        for s in rng.uniform(0.4, 3.0, 3))
        origin = tuple(float(np.float32(o)) for o in rng.uniform(-90, 90, 3))
        m = random_mask(rng, dims, float(rng.uniform(0.1, 0.9)), spacing)
        m = VoxelGrid(GridGeometry(dims, spacing, origin), m.data)
        path = tmp_path / (f"v{i}.nii.gz" if i % 2 else f"v{i}.nii")
        fileio.write_volume(m, path)
        back = fileio.read_volume(path)
        assert back.equals(m), f"round trip {i} not bit-exact"
        fileio.write_volume(back, tmp_path / "again.nii")
        fileio.write_volume(m, tmp_path / "orig.nii")
        assert (tmp_path / "again.nii").read_bytes() == \
            (tmp_path / "orig.nii").read_bytes()

        manifest = fileio.DatasetManifest(
            cases=[fileio.CaseEntry(f"case_{j}",
                                    ("train", "test", "test-extra")[j % 3],
                                    {"full": f"f{j}.nii"}, seed=j)
                   for j in range(int(rng.integers(1, 6)))],
            master_seed=i)
        mp = tmp_path / "m.json"
        fileio.write_manifest(manifest, mp)
        assert fileio.read_manifest(mp) == manifest

    # out-of-subset headers raise the documented errors
    good = tmp_path / "good.nii"
    fileio.write_volume(random_mask(rng, (4, 4, 4)), good)
    raw = bytearray(good.read_bytes())

    bad = bytearray(raw)
    bad[344:348] = b"ni1\x00"
    (tmp_path / "bad1.nii").write_bytes(bytes(bad))
    with pytest.raises(BadMagicError):
        fileio.read_volume(tmp_path / "bad1.nii")

    bad = bytearray(raw)
    import struct
    struct.pack_into("<h", bad, 70, 4)
    (tmp_path / "bad2.nii").write_bytes(bytes(bad))
    with pytest.raises(UnsupportedDatatypeError):
        fileio.read_volume(tmp_path / "bad2.nii")

    (tmp_path / "bad3.nii").write_bytes(bytes(raw[:300]))
    with pytest.raises(TruncatedError):
        fileio.read_volume(tmp_path / "bad3.nii")

    bad = bytearray(raw)
    struct.pack_into("<h", bad, 252, 0)
    struct.pack_into("<h", bad, 254, 1)
    c, s = np.cos(0.4), np.sin(0.4)
    struct.pack_into("<4f", bad, 280, c, -s, 0, 0)
    struct.pack_into("<4f", bad, 296, s, c, 0, 0)
    struct.pack_into("<4f", bad, 312, 0, 0, 1, 0)
    (tmp_path / "bad4.nii").write_bytes(bytes(bad))
    with pytest.raises(NonOrthogonalOrientationError):
        fileio.read_volume(tmp_path / "bad4.nii")

    report("I/O round trips",
           "100 volume + manifest round trips byte/bit-exact; "
           "4 out-of-subset headers rejected with documented errors",
           time.time() - t0, limit=60)


def test_end_to_end_smoke(tmp_path):
    t0 = time.time()

    def cli(*args):
        r = subprocess.run([sys.executable, "-m", "craniotk", *args],
                           cwd=tmp_path, capture_output=True, text=True)
        assert r.returncode == 0, f"{args}: {r.stderr}"
        return r

    cli("phantom", "--n", "6", "--seed", "40", "--spacing", "2.5",
        "--jitter", "0.2", "--out-dir", "train", "--subset", "train")
    cli("phantom", "--n", "10", "--seed", "41", "--spacing", "2.5",
        "--jitter", "0.2", "--out-dir", "test", "--subset", "test")
    cli("craniectomy", "--manifest", "test/manifest.json", "--seed", "7",
        "--noise-p", "0.01", "--out-dir", "defects")

    # the challenge-style split: the last two cases are out-of-distribution
    gt = fileio.read_manifest(tmp_path / "defects" / "manifest.json")
    for case in gt.cases[-2:]:
        case.subset = "test-extra"
    fileio.write_manifest(gt, tmp_path / "defects" / "manifest.json")

    cli("atlas", "--manifest", "train/manifest.json",
        "--grid-dims", "80,80,64", "--grid-spacing", "2.5",
        "--out", "atlas_dir")
    cli("register", "--manifest", "defects/manifest.json",
        "--atlas", "atlas_dir", "--out-dir", "reg")
    cli("reconstruct", "--method", "atlas-sub", "--manifest",
        "reg/manifest.json", "--atlas", "atlas_dir", "--map-back",
        "--out-dir", "preds")
    cli("evaluate", "--pred-manifest", "preds/manifest.json",
        "--gt-manifest", "defects/manifest.json",
        "--out-report", "report.json", "--csv", "report.csv")

    doc = json.loads((tmp_path / "report.json").read_text())
    rep = report_from_json((tmp_path / "report.json").read_text())
    assert len(rep.rows) == 10
    assert set(rep.subsets) == {"test", "test-extra"}
    for agg in (*rep.subsets.values(), rep.overall):
        assert agg.mean_dice is not None and agg.std_dice is not None
    assert rep.subsets["test"].n == 8 and rep.subsets["test-extra"].n == 2
    assert rep.overall.n == 10
    assert doc["aggregates"]["overall"]["mean_dice"] == rep.overall.mean_dice
    assert rep.meta["std_kind"] == "population"

    elapsed = time.time() - t0
    report("end-to-end smoke",
           f"10 cases through phantom->craniectomy->atlas->register->"
           f"reconstruct->evaluate; report has test (n=8), test-extra (n=2), "
           f"overall mean (std); overall Dice {rep.overall.mean_dice:.3f}",
           elapsed, limit=900)
