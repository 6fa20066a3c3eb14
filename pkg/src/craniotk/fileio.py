"""Bit-exact volume file I/O (NIfTI-1 subset), dataset manifests, and
transform files.

Supported NIfTI-1 subset: single-file ``n+1`` magic, datatypes uint8 and
float32, 3-D (trailing dims of 1 tolerated), axis-aligned orientation
(permutations and flips are normalized at read time), no header extensions,
optional gzip container selected by the ``.gz`` extension. Anything outside
this subset is a hard error, never a silent default.

The writer is deterministic: identical grids produce byte-identical files
(gzip mtime pinned to 0).
"""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import (
    BadMagicError,
    IoFailureError,
    NonOrthogonalOrientationError,
    SchemaViolationError,
    TruncatedError,
    UnsupportedDatatypeError,
    UnsupportedHeaderError,
)
from .grid import GridGeometry, ScalarGrid, VoxelGrid
from .transforms import RigidTransform

_HDR_FMT = ("i 10s 18s i h c B 8h 3f h h h h 8f f f f h B B f f f f i i "
            "80s 24s h h 6f 4f 4f 4f 16s 4s")
_HDR_SIZE = 348
_VOX_OFFSET = 352
_DT_UINT8 = 2
_DT_FLOAT32 = 16

MANIFEST_FORMAT = "craniotk-manifest/1"
SUBSETS = ("train", "test", "test-extra")
PATH_KEYS = ("full", "defected", "defect", "transform",
             "full_reg", "defected_reg", "defect_reg")


# ---------------------------------------------------------------------------
# NIfTI-1 subset
# ---------------------------------------------------------------------------

def _pack_header(dims, spacing, origin, datatype, bitpix) -> bytes:
    dim = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1]
    pixdim = [1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0]
    return struct.pack(
        "<" + _HDR_FMT,
        _HDR_SIZE,                  # sizeof_hdr
        b"", b"",                   # data_type, db_name (unused)
        0, 0, b"r", 0,              # extents, session_error, regular, dim_info
        *dim,
        0.0, 0.0, 0.0,              # intent_p1..3
        0,                          # intent_code
        datatype, bitpix,
        0,                          # slice_start
        *pixdim,
        float(_VOX_OFFSET),
        1.0, 0.0,                   # scl_slope, scl_inter
        0, 0,                       # slice_end, slice_code
        2,                          # xyzt_units: mm
        0.0, 0.0, 0.0, 0.0,         # cal_max, cal_min, slice_duration, toffset
        0, 0,                       # glmax, glmin
        f"craniotk {__version__}".encode(), b"",   # descrip, aux_file
        1, 0,                       # qform_code=1, sform_code=0
        0.0, 0.0, 0.0,              # quatern_b, c, d (identity)
        origin[0], origin[1], origin[2],
        0.0, 0.0, 0.0, 0.0,         # srow_x
        0.0, 0.0, 0.0, 0.0,         # srow_y
        0.0, 0.0, 0.0, 0.0,         # srow_z
        b"",                        # intent_name
        b"n+1\x00",
    )


def _open_out(path):
    f = open(path, "wb")
    if str(path).endswith(".gz"):
        return gzip.GzipFile(filename="", mode="wb", fileobj=f, mtime=0), f
    return f, f


def _write_nifti(path, array, geometry, datatype, bitpix):
    payload = _pack_header(geometry.dims, geometry.spacing, geometry.origin,
                           datatype, bitpix)
    payload += b"\x00\x00\x00\x00"  # no header extensions
    payload += array.tobytes(order="F")
    try:
        stream, raw = _open_out(path)
        try:
            stream.write(payload)
        finally:
            stream.close()
            if raw is not stream:
                raw.close()
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def write_volume(m: VoxelGrid, path) -> None:
    """Write a binary mask as NIfTI-1 uint8 (deterministic byte output)."""
    _write_nifti(path, m.data.astype(np.uint8), m.geom, _DT_UINT8, 8)


def write_scalar_volume(g: ScalarGrid, path) -> None:
    """Write a scalar grid (e.g. the atlas average) as NIfTI-1 float32."""
    _write_nifti(path, g.data.astype(np.float32), g.geom, _DT_FLOAT32, 32)


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if str(path).endswith(".gz"):
        try:
            buf = gzip.decompress(buf)
        except (OSError, EOFError) as exc:
            raise TruncatedError(f"{path}: bad gzip container: {exc}") from exc
    return buf


def _signed_permutation(r, tol=1e-4):
    """Decompose a rotation into (world_axis, sign) per file axis, or None."""
    perm = []
    signs = []
    for j in range(3):
        col = r[:, j]
        i = int(np.argmax(np.abs(col)))
        if abs(abs(col[i]) - 1.0) > tol or np.abs(np.delete(col, i)).max() > tol:
            return None
        perm.append(i)
        signs.append(1.0 if col[i] > 0 else -1.0)
    if sorted(perm) != [0, 1, 2]:
        return None
    return perm, signs


def _quat_to_matrix(b, c, d, qfac):
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    r = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ])
    r[:, 2] *= qfac
    return r


def _parse_header(buf, path):
    if len(buf) < _HDR_SIZE:
        raise TruncatedError(f"{path}: {len(buf)} bytes, need a 348-byte header")
    for endian in ("<", ">"):
        if struct.unpack(endian + "i", buf[:4])[0] == _HDR_SIZE:
            break
    else:
        raise BadMagicError(f"{path}: sizeof_hdr is not 348; not NIfTI-1")
    fields = struct.unpack(endian + _HDR_FMT, buf[:_HDR_SIZE])
    magic = fields[-1]
    if magic != b"n+1\x00":
        if magic.startswith(b"ni1"):
            raise BadMagicError(f"{path}: detached header/image pairs "
                                "(magic 'ni1') are not supported")
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    return endian, fields


def _geometry_from_header(fields, path):
    dim = fields[7:15]
    ndim = dim[0]
    if ndim < 3:
        raise UnsupportedHeaderError(f"{path}: dim[0]={ndim}, need 3-D data")
    if ndim > 7 or any(d < 1 for d in dim[1:ndim + 1]):
        raise UnsupportedHeaderError(f"{path}: invalid dim field {dim}")
    if any(d != 1 for d in dim[4:ndim + 1]):
        raise UnsupportedHeaderError(f"{path}: >3-D volumes are not supported")
    dims = tuple(int(d) for d in dim[1:4])

    datatype = fields[19]
    bitpix = fields[20]
    if datatype not in (_DT_UINT8, _DT_FLOAT32):
        raise UnsupportedDatatypeError(
            f"{path}: datatype code {datatype} outside supported "
            "subset (2=uint8, 16=float32)")
    expected_bits = 8 if datatype == _DT_UINT8 else 32
    if bitpix != expected_bits:
        raise UnsupportedHeaderError(
            f"{path}: bitpix {bitpix} inconsistent with datatype {datatype}")

    pixdim = fields[22:30]
    slope, inter = fields[31], fields[32]
    if not (slope in (0.0, 1.0) or np.isnan(slope)):
        raise UnsupportedHeaderError(f"{path}: scl_slope {slope} not supported")
    if not (inter == 0.0 or np.isnan(inter)):
        raise UnsupportedHeaderError(f"{path}: scl_inter {inter} not supported")

    qform_code, sform_code = fields[44], fields[45]
    if qform_code >= 1:
        b, c, d, ox, oy, oz = fields[46:52]
        spacing_file = [float(p) for p in pixdim[1:4]]
        if any(s <= 0 for s in spacing_file):
            raise UnsupportedHeaderError(f"{path}: nonpositive pixdim")
        qfac = -1.0 if pixdim[0] == -1.0 else 1.0
        r = _quat_to_matrix(b, c, d, qfac)
        origin_file = np.array([ox, oy, oz], dtype=float)
    elif sform_code >= 1:
        srow = np.array([fields[52:56], fields[56:60], fields[60:64]],
                        dtype=float)
        r = srow[:, :3]
        norms = np.linalg.norm(r, axis=0)
        if (norms <= 0).any():
            raise UnsupportedHeaderError(f"{path}: degenerate sform rows")
        spacing_file = norms.tolist()
        r = r / norms
        origin_file = srow[:, 3]
    else:
        raise UnsupportedHeaderError(
            f"{path}: no geometry (qform_code and sform_code are both 0)")

    sp = _signed_permutation(r)
    if sp is None:
        raise NonOrthogonalOrientationError(
            f"{path}: orientation is oblique or sheared; only axis "
            "permutations with flips are supported")
    perm, signs = sp
    return dims, spacing_file, origin_file, r, perm, signs, datatype


def _read_array(buf, fields, endian, dims, datatype, path):
    if buf[_HDR_SIZE:_HDR_SIZE + 4] not in (b"", b"\x00\x00\x00\x00"):
        raise UnsupportedHeaderError(f"{path}: header extensions not supported")
    vox_offset = int(fields[30])
    if vox_offset < _HDR_SIZE:
        raise UnsupportedHeaderError(f"{path}: vox_offset {vox_offset} < 348")
    dt = np.dtype(np.uint8 if datatype == _DT_UINT8 else np.float32)
    dt = dt.newbyteorder(endian)
    n = int(np.prod(dims))
    if len(buf) < vox_offset + n * dt.itemsize:
        raise TruncatedError(
            f"{path}: payload needs {n * dt.itemsize} bytes at offset "
            f"{vox_offset}, file has {len(buf)}")
    arr = np.frombuffer(buf, dtype=dt, count=n, offset=vox_offset)
    return arr.reshape(dims, order="F")


def _normalize_axes(arr, dims, spacing_file, origin_file, r, perm, signs):
    # reorder file axes to world axes and make every axis step positive
    inv = [perm.index(i) for i in range(3)]
    arr = np.transpose(arr, axes=inv)
    corner = np.zeros(3)
    for i, j in enumerate(inv):
        if signs[j] < 0:
            arr = np.flip(arr, axis=i)
            corner[j] = dims[j] - 1
    origin = r @ (corner * spacing_file) + origin_file
    spacing = tuple(spacing_file[j] for j in inv)
    geom = GridGeometry(arr.shape, spacing, tuple(origin))
    return np.ascontiguousarray(arr), geom


def _read_nifti(path):
    buf = _read_bytes(path)
    endian, fields = _parse_header(buf, path)
    dims, spacing_f, origin_f, r, perm, signs, datatype = \
        _geometry_from_header(fields, path)
    arr = _read_array(buf, fields, endian, dims, datatype, path)
    return _normalize_axes(arr, dims, spacing_f, origin_f, r, perm, signs)


def read_volume(path) -> VoxelGrid:
    """Read a NIfTI-1 subset volume as a binary mask (any nonzero voxel -> 1;
    float32 inputs are accepted and binarized)."""
    arr, geom = _read_nifti(path)
    return VoxelGrid(geom, arr != 0)


def read_scalar_volume(path) -> ScalarGrid:
    """Read a NIfTI-1 subset volume keeping real values (atlas averages)."""
    arr, geom = _read_nifti(path)
    return ScalarGrid(geom, arr.astype(np.float64))


# ---------------------------------------------------------------------------
# Transform files (FLIRT-style ASCII 4x4)
# ---------------------------------------------------------------------------

def write_transform(t: RigidTransform, path) -> None:
    lines = [" ".join(f"{v:.17g}" for v in row) for row in t.matrix]
    try:
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def read_transform(path) -> RigidTransform:
    try:
        with open(path) as f:
            tokens = f.read().split()
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    if len(tokens) != 16:
        raise IoFailureError(f"{path}: expected 16 numbers, got {len(tokens)}")
    try:
        values = [float(tok) for tok in tokens]
    except ValueError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc
    try:
        return RigidTransform(np.array(values).reshape(4, 4))
    except ValueError as exc:
        raise IoFailureError(f"{path}: not a rigid transform: {exc}") from exc


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

@dataclass
class CaseEntry:
    case_id: str
    subset: str
    paths: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    craniectomy: dict | None = None


@dataclass
class DatasetManifest:
    """Case list with provenance. ``atlas``/``channels``/``space`` describe
    training exports: channel 1 is the defected mask, channel 2 (when
    ``channels`` == 2) the atlas prior referenced by ``atlas``."""

    cases: list[CaseEntry] = field(default_factory=list)
    created_by: str = f"craniotk {__version__}"
    master_seed: int | None = None
    atlas: str | None = None
    channels: int | None = None
    space: str | None = None


def validate_manifest(manifest: DatasetManifest) -> None:
    seen = set()
    for i, case in enumerate(manifest.cases):
        where = f"cases[{i}]"
        if not case.case_id or not isinstance(case.case_id, str):
            raise SchemaViolationError(f"{where}.case_id", "must be a nonempty string")
        if case.case_id in seen:
            raise SchemaViolationError(f"{where}.case_id",
                                       f"duplicate case_id {case.case_id!r}")
        seen.add(case.case_id)
        if case.subset not in SUBSETS:
            raise SchemaViolationError(
                f"{where}.subset",
                f"{case.subset!r} not one of {', '.join(SUBSETS)}")
        for key in case.paths:
            if key not in PATH_KEYS:
                raise SchemaViolationError(f"{where}.paths.{key}", "unknown path key")
            if not isinstance(case.paths[key], str):
                raise SchemaViolationError(f"{where}.paths.{key}", "must be a string")
        if case.seed is not None and not isinstance(case.seed, int):
            raise SchemaViolationError(f"{where}.seed", "must be an integer")
    if manifest.channels not in (None, 1, 2):
        raise SchemaViolationError("channels", "must be 1 or 2")
    if manifest.space not in (None, "original", "common"):
        raise SchemaViolationError("space", "must be 'original' or 'common'")


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Serialize with a stable field order (diff-friendly, byte-deterministic)."""
    validate_manifest(manifest)
    doc = {"format": MANIFEST_FORMAT, "created_by": manifest.created_by}
    if manifest.master_seed is not None:
        doc["master_seed"] = manifest.master_seed
    for key in ("atlas", "channels", "space"):
        if getattr(manifest, key) is not None:
            doc[key] = getattr(manifest, key)
    doc["cases"] = []
    for case in manifest.cases:
        entry = {"case_id": case.case_id, "subset": case.subset,
                 "paths": {k: case.paths[k] for k in PATH_KEYS if k in case.paths}}
        if case.seed is not None:
            entry["seed"] = case.seed
        if case.craniectomy is not None:
            entry["craniectomy"] = case.craniectomy
        doc["cases"].append(entry)
    try:
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


_CASE_KEYS = {"case_id", "subset", "paths", "seed", "craniectomy"}
_TOP_KEYS = {"format", "created_by", "master_seed", "atlas", "channels",
             "space", "cases"}


def read_manifest(path, check_paths: bool = False) -> DatasetManifest:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolationError("$", f"invalid JSON: {exc}")
    if not isinstance(doc, dict):
        raise SchemaViolationError("$", "manifest must be a JSON object")
    if doc.get("format") != MANIFEST_FORMAT:
        raise SchemaViolationError("format",
                                   f"expected {MANIFEST_FORMAT!r}, got "
                                   f"{doc.get('format')!r}")
    for key in doc:
        if key not in _TOP_KEYS:
            raise SchemaViolationError(key, "unknown manifest field")
    cases_doc = doc.get("cases")
    if not isinstance(cases_doc, list):
        raise SchemaViolationError("cases", "must be a list")
    cases = []
    for i, entry in enumerate(cases_doc):
        where = f"cases[{i}]"
        if not isinstance(entry, dict):
            raise SchemaViolationError(where, "case must be an object")
        for key in entry:
            if key not in _CASE_KEYS:
                raise SchemaViolationError(f"{where}.{key}", "unknown case field")
        paths = entry.get("paths", {})
        if not isinstance(paths, dict):
            raise SchemaViolationError(f"{where}.paths", "must be an object")
        cases.append(CaseEntry(
            case_id=entry.get("case_id", ""),
            subset=entry.get("subset", ""),
            paths=dict(paths),
            seed=entry.get("seed"),
            craniectomy=entry.get("craniectomy"),
        ))
    manifest = DatasetManifest(
        cases=cases,
        created_by=doc.get("created_by", ""),
        master_seed=doc.get("master_seed"),
        atlas=doc.get("atlas"),
        channels=doc.get("channels"),
        space=doc.get("space"),
    )
    validate_manifest(manifest)
    if check_paths:
        base = os.path.dirname(os.path.abspath(path))
        for i, case in enumerate(manifest.cases):
            for key, rel in case.paths.items():
                p = resolve_path(base, rel)
                if not os.path.exists(p):
                    raise SchemaViolationError(f"cases[{i}].paths.{key}",
                                               f"file not found: {p}")
        if manifest.atlas is not None:
            p = resolve_path(base, manifest.atlas)
            if not os.path.exists(p):
                raise SchemaViolationError("atlas", f"not found: {p}")
    return manifest


def resolve_path(base_dir, rel):
    """Manifest paths are stored relative to the manifest's directory."""
    if os.path.isabs(rel):
        return rel
    return os.path.normpath(os.path.join(base_dir, rel))
