"""Dice coefficient and Hausdorff distance (mm), with per-case rows and
mean (std) aggregation per subset.

Conventions: Dice of two empty masks is 1.0 (empty vs nonempty is 0.0);
Hausdorff is undefined on empty masks and such rows carry a missing value,
excluded from HD aggregates and flagged in the report metadata. Std is the
population standard deviation (divide by N). Surface voxels use the same
face-adjacency definition as the distance transforms.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyMaskError, FullMaskError, GeometryMismatchError, \
    SchemaViolationError
from .grid import VoxelGrid, surface

REPORT_FORMAT = "craniotk-report/1"


def dice(a: VoxelGrid, b: VoxelGrid) -> float:
    """2|A n B| / (|A| + |B|); both-empty is defined as 1.0."""
    if not a.same_geometry(b):
        raise GeometryMismatchError("dice needs identical geometry")
    na = a.count
    nb = b.count
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.data & b.data))
    return 2.0 * inter / (na + nb)


def _directed_surface_distances(src: VoxelGrid, dst_surface: np.ndarray,
                                spacing) -> np.ndarray:
    d = ndimage.distance_transform_edt(~dst_surface, sampling=spacing)
    return d[surface(src).data]


def hausdorff(a: VoxelGrid, b: VoxelGrid, percentile: int = 100) -> float:
    """Symmetric max (or per-direction 95th percentile) of surface-to-surface
    Euclidean distances, spacing-aware, in mm."""
    if percentile not in (100, 95):
        raise ValueError("percentile must be 100 or 95")
    if not a.same_geometry(b):
        raise GeometryMismatchError("hausdorff needs identical geometry")
    if a.is_empty or b.is_empty:
        raise EmptyMaskError("Hausdorff distance is undefined for empty masks")
    surf_a = surface(a)
    surf_b = surface(b)
    if surf_a.is_empty or surf_b.is_empty:
        raise FullMaskError("mask fills the grid; no surface exists")
    d_ab = _directed_surface_distances(a, surf_b.data, a.spacing)
    d_ba = _directed_surface_distances(b, surf_a.data, a.spacing)
    if percentile == 100:
        return float(max(d_ab.max(), d_ba.max()))
    return float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class MetricRow:
    case_id: str
    subset: str
    dice: float
    hd_mm: float | None = None  # None = undefined (empty mask), flagged


@dataclass
class SubsetAggregate:
    n: int
    mean_dice: float
    std_dice: float
    n_hd: int                    # rows with a defined HD
    mean_hd: float | None
    std_hd: float | None


@dataclass
class EvaluationReport:
    rows: list[MetricRow]
    subsets: dict[str, SubsetAggregate]
    overall: SubsetAggregate
    meta: dict = field(default_factory=dict)


def _aggregate_rows(rows) -> SubsetAggregate:
    dices = np.array([r.dice for r in rows], dtype=float)
    hds = np.array([r.hd_mm for r in rows if r.hd_mm is not None], dtype=float)
    return SubsetAggregate(
        n=len(rows),
        mean_dice=float(dices.mean()),
        std_dice=float(dices.std()),  # population std
        n_hd=len(hds),
        mean_hd=float(hds.mean()) if len(hds) else None,
        std_hd=float(hds.std()) if len(hds) else None,
    )


def aggregate(rows, percentile: int = 100) -> EvaluationReport:
    """Per-subset and overall mean (std) aggregates from per-case rows."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to aggregate")
    subsets = {}
    for name in dict.fromkeys(r.subset for r in rows):  # stable order
        subsets[name] = _aggregate_rows([r for r in rows if r.subset == name])
    return EvaluationReport(
        rows=rows,
        subsets=subsets,
        overall=_aggregate_rows(rows),
        meta={
            "percentile": percentile,
            "std_kind": "population",
            "hd_missing": [r.case_id for r in rows if r.hd_mm is None],
        },
    )


def _agg_dict(agg: SubsetAggregate) -> dict:
    return {"n": agg.n, "mean_dice": agg.mean_dice, "std_dice": agg.std_dice,
            "n_hd": agg.n_hd, "mean_hd": agg.mean_hd, "std_hd": agg.std_hd}


def report_to_json(report: EvaluationReport) -> str:
    doc = {
        "format": REPORT_FORMAT,
        "rows": [{"case_id": r.case_id, "subset": r.subset, "dice": r.dice,
                  "hd_mm": r.hd_mm} for r in report.rows],
        "aggregates": {
            "subsets": {k: _agg_dict(v) for k, v in report.subsets.items()},
            "overall": _agg_dict(report.overall),
        },
        "meta": report.meta,
    }
    return json.dumps(doc, indent=2) + "\n"


def report_from_json(text: str) -> EvaluationReport:
    doc = json.loads(text)
    if doc.get("format") != REPORT_FORMAT:
        raise SchemaViolationError("format", f"expected {REPORT_FORMAT!r}")
    rows = [MetricRow(r["case_id"], r["subset"], r["dice"], r.get("hd_mm"))
            for r in doc["rows"]]
    aggs = doc["aggregates"]

    def _agg(d):
        return SubsetAggregate(d["n"], d["mean_dice"], d["std_dice"],
                               d["n_hd"], d["mean_hd"], d["std_hd"])

    return EvaluationReport(
        rows=rows,
        subsets={k: _agg(v) for k, v in aggs["subsets"].items()},
        overall=_agg(aggs["overall"]),
        meta=doc.get("meta", {}),
    )


CSV_HEADER = ["case_id", "subset", "dice", "hd_mm"]


def report_to_csv(report: EvaluationReport) -> str:
    """One row per case; missing HD is an empty field."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in report.rows:
        writer.writerow([r.case_id, r.subset, repr(r.dice),
                         "" if r.hd_mm is None else repr(r.hd_mm)])
    return buf.getvalue()


def format_table(report: EvaluationReport) -> str:
    """Mean (std) summary table, one line per subset plus overall."""
    lines = [f"{'subset':<12} {'n':>4}  {'Dice':<16} {'HD (mm)':<16}"]

    def fmt(agg, name):
        d = f"{agg.mean_dice:.3f} ({agg.std_dice:.3f})"
        if agg.mean_hd is None:
            h = "-"
        else:
            h = f"{agg.mean_hd:.3f} ({agg.std_hd:.3f})"
        return f"{name:<12} {agg.n:>4}  {d:<16} {h:<16}"

    for name, agg in report.subsets.items():
        lines.append(fmt(agg, name))
    lines.append(fmt(report.overall, "overall"))
    return "\n".join(lines)
