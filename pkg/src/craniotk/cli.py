"""Batch pipeline driver: every stage as a subcommand.

Stages compose into the end-to-end flow: phantom -> craniectomy -> atlas ->
register -> reconstruct -> evaluate, with map-back returning predictions to
the original image grid. All subcommands are deterministic given flags and
seeds (worker parallelism never changes file bytes).

Exit codes: 0 success, 1 runtime failure, 2 usage error. Logs are
line-delimited JSON events on stderr; the leading "run" event echoes the
effective configuration. Flags override config-file values, which override
defaults; config files are ``key = value`` lines keyed by long flag names.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, atlas as atlas_mod, craniectomy as cran, fileio, \
    metrics as metrics_mod, phantom as phantom_mod, registration as reg
from .errors import CraniotkError, EmptyMaskError
from .kernels import BACKEND
from .reconstruct import PostprocessOptions, atlas_subtract, mirror_reconstruct
from .transforms import COMMON_DIMS, COMMON_SPACING, common_grid


def log_event(event: str, **fields):
    doc = {"event": event}
    doc.update(fields)
    print(json.dumps(doc), file=sys.stderr)


class UsageError(Exception):
    pass


def _parse_triple(text, kind=float):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise UsageError(f"expected 1 or 3 values, got {text!r}")
    return tuple(kind(p) for p in parts)


def _case_seed(master: int, index: int, stream: int = 0) -> int:
    # one independent stream per (case, purpose); order of execution never
    # changes the draw
    ss = np.random.SeedSequence([master, index, stream])
    return int(ss.generate_state(1)[0])


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return args.workers
    env = os.environ.get("CRANIOTK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"CRANIOTK_THREADS={env!r} is not an integer")
    return os.cpu_count() or 1


def _run_cases(cases, fn, workers, case_id=None):
    """Run fn per case; log and collect failures, never abort the batch."""
    get_id = case_id or (lambda c: c.case_id)
    failures = []

    def wrapped(case):
        try:
            fn(case)
            return None
        except Exception as exc:
            return get_id(case), exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(wrapped, cases))
    else:
        results = [wrapped(c) for c in cases]
    for res in results:
        if res is not None:
            cid, exc = res
            failures.append(cid)
            log_event("case_failed", case_id=cid, error=str(exc),
                      error_type=type(exc).__name__)
    return failures


def _load_case_volume(manifest_path, case, key):
    base = os.path.dirname(os.path.abspath(manifest_path))
    if key not in case.paths:
        raise CraniotkError(f"{case.case_id}: manifest has no {key!r} path")
    return fileio.read_volume(fileio.resolve_path(base, case.paths[key]))


def _grid_from_args(args):
    dims = _parse_triple(args.grid_dims, int)
    spacing = _parse_triple(args.grid_spacing, float)
    return common_grid(dims=dims, spacing=spacing)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_phantom(args):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    spacing = _parse_triple(args.spacing)
    workers = _workers(args)
    os.makedirs(args.out_dir, exist_ok=True)
    variability = phantom_mod.PopulationVariability().scaled(args.jitter)
    specs = phantom_mod.sample_population(args.n, args.seed, variability)
    geometry = phantom_mod.fit_geometry(specs, spacing)
    manifest = fileio.DatasetManifest(master_seed=args.seed)

    def one(item):
        i, spec = item
        case_id = f"case_{i:04d}"
        full = phantom_mod.generate_phantom(spec, geometry)
        fileio.write_volume(full,
                            os.path.join(args.out_dir, f"{case_id}_full.nii.gz"))
        log_event("case_done", case_id=case_id, voxels_on=full.count)

    failures = _run_cases(list(enumerate(specs)), one, workers,
                          case_id=lambda item: f"case_{item[0]:04d}")
    for i, spec in enumerate(specs):
        case_id = f"case_{i:04d}"
        manifest.cases.append(fileio.CaseEntry(
            case_id=case_id, subset=args.subset,
            paths={"full": f"{case_id}_full.nii.gz"}, seed=spec.seed))
    fileio.write_manifest(manifest, os.path.join(args.out_dir, "manifest.json"))
    log_event("done", cases=len(specs), out_dir=args.out_dir)
    return 1 if failures else 0


_TEMPLATE_MIX = {
    "auto": (1 / 3, 1 / 3, 1 / 3),
    "sphere": (1.0, 0.0, 0.0),
    "cube": (0.0, 1.0, 0.0),
    "challenge": (0.0, 0.0, 1.0),
}


def cmd_craniectomy(args):
    manifest = fileio.read_manifest(args.manifest, check_paths=True)
    os.makedirs(args.out_dir, exist_ok=True)
    mix = _TEMPLATE_MIX[args.template]
    out_manifest = fileio.DatasetManifest(master_seed=args.seed)
    out_cases = {}

    def one(item):
        index, case = item
        full = _load_case_volume(args.manifest, case, "full")
        seed = _case_seed(args.seed, index)
        spec = cran.sample_spec(full, seed, template_mix=mix)
        triplet = cran.apply_craniectomy(full, spec)
        defected = triplet.defected
        if args.noise_p > 0:
            defected = cran.salt_pepper(defected, args.noise_p,
                                        _case_seed(args.seed, index, 1))
        paths = {
            "full": os.path.relpath(
                fileio.resolve_path(os.path.dirname(os.path.abspath(args.manifest)),
                                    case.paths["full"]), args.out_dir),
            "defected": f"{case.case_id}_defected.nii.gz",
            "defect": f"{case.case_id}_defect.nii.gz",
        }
        fileio.write_volume(defected, os.path.join(args.out_dir, paths["defected"]))
        fileio.write_volume(triplet.defect, os.path.join(args.out_dir, paths["defect"]))
        out_cases[case.case_id] = fileio.CaseEntry(
            case_id=case.case_id, subset=case.subset, paths=paths, seed=seed,
            craniectomy=spec.to_dict())
        log_event("case_done", case_id=case.case_id, template=spec.template,
                  defect_voxels=triplet.defect.count)

    failures = _run_cases(list(enumerate(manifest.cases)), one, _workers(args),
                          case_id=lambda item: item[1].case_id)
    # keep manifest order independent of completion order
    out_manifest.cases = [out_cases[c.case_id] for c in manifest.cases
                          if c.case_id in out_cases]
    if args.export_training:
        out_manifest.space = "original"
        out_manifest.channels = 1
    fileio.write_manifest(out_manifest,
                          os.path.join(args.out_dir, "manifest.json"))
    log_event("done", cases=len(out_manifest.cases), failed=len(failures),
              noise_p=args.noise_p)
    return 1 if failures else 0


def cmd_atlas(args):
    manifest = fileio.read_manifest(args.manifest, check_paths=True)
    if args.iterations < 1:
        raise UsageError("--iterations must be >= 1")
    grid = _grid_from_args(args)
    fulls = [_load_case_volume(args.manifest, c, "full")
             for c in manifest.cases]
    built = atlas_mod.build_atlas(
        fulls, t=args.threshold, iterations=args.iterations, grid=grid,
        case_ids=[c.case_id for c in manifest.cases], workers=_workers(args))
    atlas_mod.save_atlas(built, args.out)
    log_event("done", out=args.out, cases=len(built.provenance),
              mean_dice_history=built.mean_dice_history)
    return 0


def _register_one(moving, built_atlas):
    return reg.register_rigid(moving, built_atlas.binary)


def cmd_register(args):
    built = atlas_mod.load_atlas(args.atlas)
    if bool(args.manifest) == bool(args.moving):
        raise UsageError("give exactly one of --manifest or --moving")

    if args.moving:
        if not args.out_transform:
            raise UsageError("--moving mode requires --out-transform")
        moving = fileio.read_volume(args.moving)
        transform = _register_one(moving, built)
        fileio.write_transform(transform, args.out_transform)
        if args.out_resampled:
            resampled = reg.resample(moving, transform, built.grid,
                                     interp="trilinear")
            fileio.write_volume(resampled, args.out_resampled)
        log_event("done", out_transform=args.out_transform,
                  rotation_deg=transform.rotation_angle_deg())
        return 0

    if not args.out_dir:
        raise UsageError("--manifest mode requires --out-dir")
    manifest = fileio.read_manifest(args.manifest, check_paths=True)
    os.makedirs(args.out_dir, exist_ok=True)
    base = os.path.dirname(os.path.abspath(args.manifest))
    out_cases = {}

    def one(case):
        key = "defected" if "defected" in case.paths else "full"
        moving = _load_case_volume(args.manifest, case, key)
        transform = _register_one(moving, built)
        paths = {}
        for k in ("full", "defected", "defect"):
            if k in case.paths:
                paths[k] = os.path.relpath(
                    fileio.resolve_path(base, case.paths[k]), args.out_dir)
        paths["transform"] = f"{case.case_id}.mat"
        fileio.write_transform(transform,
                               os.path.join(args.out_dir, paths["transform"]))
        resampled = reg.resample(moving, transform, built.grid,
                                 interp="trilinear")
        reg_key = "defected_reg" if key == "defected" else "full_reg"
        paths[reg_key] = f"{case.case_id}_{key}_reg.nii.gz"
        fileio.write_volume(resampled,
                            os.path.join(args.out_dir, paths[reg_key]))
        if "defect" in case.paths:
            defect = _load_case_volume(args.manifest, case, "defect")
            defect_reg = reg.resample(defect, transform, built.grid,
                                      interp="trilinear")
            paths["defect_reg"] = f"{case.case_id}_defect_reg.nii.gz"
            fileio.write_volume(defect_reg,
                                os.path.join(args.out_dir, paths["defect_reg"]))
        out_cases[case.case_id] = fileio.CaseEntry(
            case_id=case.case_id, subset=case.subset, paths=paths,
            seed=case.seed, craniectomy=case.craniectomy)
        log_event("case_done", case_id=case.case_id,
                  rotation_deg=transform.rotation_angle_deg())

    failures = _run_cases(manifest.cases, one, _workers(args))
    out_manifest = fileio.DatasetManifest(
        cases=[out_cases[c.case_id] for c in manifest.cases
               if c.case_id in out_cases],
        master_seed=manifest.master_seed, space="common")
    if args.export_training:
        out_manifest.atlas = os.path.relpath(os.path.abspath(args.atlas),
                                             args.out_dir)
        out_manifest.channels = args.channels
    fileio.write_manifest(out_manifest,
                          os.path.join(args.out_dir, "manifest.json"))
    log_event("done", cases=len(out_manifest.cases), failed=len(failures))
    return 1 if failures else 0


def _reconstruct_single(args, built, defected, transform):
    opts = PostprocessOptions(close_radius_mm=args.close_radius,
                              max_distance_mm=args.max_distance)
    if built is None:
        registered = defected  # mirror on an already-registered volume
    elif defected.same_geometry(built.binary):
        registered = defected
    elif transform is not None:
        registered = reg.resample(defected, transform, built.grid,
                                  interp="trilinear")
    else:
        raise CraniotkError("defected volume is not on the atlas grid and "
                            "no --transform was given")
    if args.method == "atlas-sub":
        pred = atlas_subtract(registered, built, transform, opts)
    else:
        pred = mirror_reconstruct(registered, opts)
    if args.map_back:
        if transform is None:
            raise CraniotkError("--map-back needs a transform")
        pred = reg.map_back(pred, transform, defected.geom)
    return pred


def cmd_reconstruct(args):
    if args.method == "atlas-sub" and not args.atlas:
        raise UsageError("--method atlas-sub requires --atlas")
    if bool(args.manifest) == bool(args.defected):
        raise UsageError("give exactly one of --manifest or --defected")
    built = atlas_mod.load_atlas(args.atlas) if args.atlas else None

    if args.defected:
        if not args.out:
            raise UsageError("--defected mode requires --out")
        defected = fileio.read_volume(args.defected)
        transform = fileio.read_transform(args.transform) if args.transform else None
        pred = _reconstruct_single(args, built, defected, transform)
        fileio.write_volume(pred, args.out)
        log_event("done", out=args.out, pred_voxels=pred.count)
        return 0

    manifest = fileio.read_manifest(args.manifest, check_paths=True)
    if not args.out_dir:
        raise UsageError("--manifest mode requires --out-dir")
    os.makedirs(args.out_dir, exist_ok=True)
    base = os.path.dirname(os.path.abspath(args.manifest))
    out_cases = {}

    def one(case):
        if "defected_reg" in case.paths:
            registered = _load_case_volume(args.manifest, case, "defected_reg")
        else:
            registered = None
        defected = _load_case_volume(args.manifest, case, "defected")
        transform = None
        if "transform" in case.paths:
            transform = fileio.read_transform(
                fileio.resolve_path(base, case.paths["transform"]))
        opts = PostprocessOptions(close_radius_mm=args.close_radius,
                                  max_distance_mm=args.max_distance)
        if registered is None:
            if built is not None and defected.same_geometry(built.binary):
                registered = defected
            elif transform is not None and built is not None:
                registered = reg.resample(defected, transform, built.grid,
                                          interp="trilinear")
            else:
                raise CraniotkError(f"{case.case_id}: no registered volume "
                                    "and no transform+atlas to build one")
        if args.method == "atlas-sub":
            pred = atlas_subtract(registered, built, transform, opts)
        else:
            pred = mirror_reconstruct(registered, opts)
        if args.map_back:
            if transform is None:
                raise CraniotkError(f"{case.case_id}: --map-back needs a "
                                    "transform path in the manifest")
            pred = reg.map_back(pred, transform, defected.geom)
        name = f"{case.case_id}_pred.nii.gz"
        fileio.write_volume(pred, os.path.join(args.out_dir, name))
        paths = {"defect": name}
        for k in ("defected", "transform"):
            if k in case.paths:
                paths[k] = os.path.relpath(
                    fileio.resolve_path(base, case.paths[k]), args.out_dir)
        out_cases[case.case_id] = fileio.CaseEntry(
            case_id=case.case_id, subset=case.subset, paths=paths)
        log_event("case_done", case_id=case.case_id, pred_voxels=pred.count)

    failures = _run_cases(manifest.cases, one, _workers(args))
    out_manifest = fileio.DatasetManifest(
        cases=[out_cases[c.case_id] for c in manifest.cases
               if c.case_id in out_cases],
        master_seed=manifest.master_seed,
        space="original" if args.map_back else "common")
    fileio.write_manifest(out_manifest,
                          os.path.join(args.out_dir, "manifest.json"))
    log_event("done", cases=len(out_manifest.cases), failed=len(failures))
    return 1 if failures else 0


def cmd_evaluate(args):
    pred_manifest = fileio.read_manifest(args.pred_manifest, check_paths=True)
    gt_manifest = fileio.read_manifest(args.gt_manifest, check_paths=True)
    gt_by_id = {c.case_id: c for c in gt_manifest.cases}
    missing = [c.case_id for c in pred_manifest.cases
               if c.case_id not in gt_by_id]
    if missing:
        raise CraniotkError(f"cases missing from ground truth: {missing}")
    rows = []
    for case in pred_manifest.cases:
        gt_case = gt_by_id[case.case_id]
        pred = _load_case_volume(args.pred_manifest, case, "defect")
        truth = _load_case_volume(args.gt_manifest, gt_case, "defect")
        d = metrics_mod.dice(pred, truth)
        try:
            hd = metrics_mod.hausdorff(pred, truth, percentile=args.hd_percentile)
        except EmptyMaskError:
            hd = None
        rows.append(metrics_mod.MetricRow(case.case_id, gt_case.subset, d, hd))
        log_event("case_done", case_id=case.case_id, dice=d, hd_mm=hd)
    report = metrics_mod.aggregate(rows, percentile=args.hd_percentile)
    with open(args.out_report, "w") as f:
        f.write(metrics_mod.report_to_json(report))
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(metrics_mod.report_to_csv(report))
    print(metrics_mod.format_table(report))
    log_event("done", out_report=args.out_report,
              overall_mean_dice=report.overall.mean_dice)
    return 0


def cmd_map_back(args):
    pred = fileio.read_volume(args.pred)
    transform = fileio.read_transform(args.transform)
    like = fileio.read_volume(args.like)
    out = reg.map_back(pred, transform, like.geom)
    fileio.write_volume(out, args.out)
    log_event("done", out=args.out, pred_voxels=out.count)
    return 0


# ---------------------------------------------------------------------------
# Parser and config plumbing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="craniotk",
        description="Cranial implant pipeline on binary skull masks.")
    parser.add_argument("--version", action="version",
                        version=f"craniotk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file "
                                        "(flags override)")
        p.add_argument("--workers", type=int, default=0,
                       help="worker threads (default: CRANIOTK_THREADS or "
                            "all cores)")

    p = sub.add_parser("phantom", help="generate synthetic full skulls")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spacing", default="1.0", help="mm, 1 or 3 values")
    p.add_argument("--jitter", type=float, default=1.0,
                   help="population variability scale (0 = identical skulls)")
    p.add_argument("--subset", default="train",
                   choices=list(fileio.SUBSETS))
    p.add_argument("--out-dir", required=True)
    add_common(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("craniectomy", help="simulate defects on full skulls")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--template", default="auto",
                   choices=["auto", "sphere", "cube", "challenge"])
    p.add_argument("--noise-p", type=float, default=0.0,
                   help="salt-and-pepper flip probability on inputs")
    p.add_argument("--export-training", action="store_true")
    p.add_argument("--out-dir", required=True)
    add_common(p)
    p.set_defaults(func=cmd_craniectomy)

    p = sub.add_parser("atlas", help="build the mean-shape atlas")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=atlas_mod.DEFAULT_THRESHOLD)
    p.add_argument("--iterations", type=int, default=atlas_mod.DEFAULT_ITERATIONS)
    p.add_argument("--grid-dims", default=",".join(map(str, COMMON_DIMS)))
    p.add_argument("--grid-spacing",
                   default=",".join(map(str, COMMON_SPACING)))
    p.add_argument("--out", required=True, help="output atlas directory")
    add_common(p)
    p.set_defaults(func=cmd_atlas)

    p = sub.add_parser("register", help="rigidly align cases to the atlas")
    p.add_argument("--manifest", help="batch mode: case manifest")
    p.add_argument("--moving", help="single-case mode: one volume")
    p.add_argument("--atlas", required=True, help="atlas directory")
    p.add_argument("--out-transform", help="single-case mode: .mat output")
    p.add_argument("--out-resampled",
                   help="single-case mode: common-space volume output")
    p.add_argument("--export-training", action="store_true",
                   help="record the trainer channel layout in the manifest")
    p.add_argument("--channels", type=int, default=2, choices=[1, 2])
    p.add_argument("--out-dir", help="batch output directory")
    add_common(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("reconstruct", help="classical implant baselines")
    p.add_argument("--method", required=True, choices=["atlas-sub", "mirror"])
    p.add_argument("--manifest", help="batch mode: registered manifest")
    p.add_argument("--defected", help="single-case mode: defected volume")
    p.add_argument("--atlas", help="atlas directory")
    p.add_argument("--transform", help="single-case mode: transform file")
    p.add_argument("--map-back", action="store_true",
                   help="return predictions to the original grid via T^-1")
    p.add_argument("--close-radius", type=float, default=1.5, help="mm")
    p.add_argument("--max-distance", type=float, default=10.0,
                   help="mm, distance gate from the defected skull")
    p.add_argument("--out", help="single-case output volume")
    p.add_argument("--out-dir", help="batch output directory")
    add_common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="Dice / Hausdorff report")
    p.add_argument("--pred-manifest", required=True)
    p.add_argument("--gt-manifest", required=True)
    p.add_argument("--hd-percentile", type=int, default=100, choices=[100, 95])
    p.add_argument("--out-report", required=True, help="JSON report path")
    p.add_argument("--csv", help="optional CSV path")
    add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("map-back", help="apply T^-1 to a prediction volume")
    p.add_argument("--pred", required=True)
    p.add_argument("--transform", required=True)
    p.add_argument("--like", required=True,
                   help="volume defining the original grid")
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_map_back)

    return parser


def _apply_config_file(parser, argv):
    """Config precedence: flags > config file > defaults."""
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1]
    command = next((a for a in argv if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions
                      if isinstance(a, argparse._SubParsersAction))
    sub = subparsers.choices.get(command)
    if sub is None:
        return
    known = {a.dest for a in sub._actions}
    overrides = {}
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#")[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                dest = key.strip().replace("-", "_")
                if dest not in known:
                    raise UsageError(f"{path}:{lineno}: unknown key "
                                     f"{key.strip()!r} for {command!r}")
                overrides[dest] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    # string defaults go through each option's type converter in parse_args
    sub.set_defaults(**overrides)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
    except UsageError as exc:
        print(f"craniotk: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    config = {k: v for k, v in vars(args).items()
              if k not in ("func",) and not callable(v)}
    log_event("run", command=args.command, version=__version__,
              kernel_backend=BACKEND, config=config)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"craniotk: error: {exc}", file=sys.stderr)
        return 2
    except CraniotkError as exc:
        log_event("error", error=str(exc), error_type=type(exc).__name__)
        return 1
    except OSError as exc:
        log_event("error", error=str(exc), error_type="OSError")
        return 1


def entry():
    sys.exit(main())
