"""Mask evaluation battery: overlap scores, distances, histograms,
reliability curves, volume-agreement statistics, small-target cohorts."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DataError, UndefinedMetricError
from .pvol import MaskVolume

DSC_BUCKETS = (0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass
class VolumeReport:
    volume_id: str
    dsc: float
    iou: float
    recall: float
    precision: float
    hd_directed: float  # None when undefined (an empty mask)
    hd_symmetric: float
    rmse: float
    pred_voxels: int
    gt_voxels: int
    seconds: float = None


@dataclass
class SliceReport:
    volume_id: str
    slice_index: int
    dsc: float
    gt_pixels: int
    is_head_or_tail: bool


def _check_dims(a: MaskVolume, b: MaskVolume) -> None:
    if a.dims != b.dims:
        raise ConfigError(f"mask dims differ: {a.dims} vs {b.dims}")


def _counts(a, b):
    ad = np.asarray(a.data if isinstance(a, MaskVolume) else a).astype(bool)
    bd = np.asarray(b.data if isinstance(b, MaskVolume) else b).astype(bool)
    inter = int(np.count_nonzero(ad & bd))
    return inter, int(np.count_nonzero(ad)), int(np.count_nonzero(bd))


def dsc(a: MaskVolume, b: MaskVolume) -> float:
    """Dice similarity 2|a n b| / (|a| + |b|); two empty masks agree (1.0)."""
    _check_dims(a, b)
    inter, na, nb = _counts(a, b)
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def iou(a: MaskVolume, b: MaskVolume) -> float:
    """Intersection over union; two empty masks agree (1.0)."""
    _check_dims(a, b)
    inter, na, nb = _counts(a, b)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return inter / union


def recall(pred: MaskVolume, gt: MaskVolume) -> float:
    """Fraction of reference voxels recovered."""
    _check_dims(pred, gt)
    inter, npred, ngt = _counts(pred, gt)
    if ngt == 0:
        if npred == 0:
            return 1.0
        warnings.warn("recall undefined for empty reference; reporting 0.0")
        return 0.0
    return inter / ngt


def precision(pred: MaskVolume, gt: MaskVolume) -> float:
    """Fraction of predicted voxels that are correct."""
    _check_dims(pred, gt)
    inter, npred, ngt = _counts(pred, gt)
    if npred == 0:
        if ngt == 0:
            return 1.0
        warnings.warn("precision undefined for empty prediction; reporting 0.0")
        return 0.0
    return inter / npred


def hausdorff(a: MaskVolume, b: MaskVolume, spacing=None, mode: str = "symmetric") -> float:
    """Max-min Euclidean distance between foreground voxel centers, in mm.

    directed mode measures a -> b only; symmetric takes the max of both
    directions. Undefined when either mask is empty.
    """
    _check_dims(a, b)
    if mode not in ("directed", "symmetric"):
        raise ConfigError(f"mode must be 'directed' or 'symmetric', got {mode!r}")
    if spacing is None:
        spacing = a.spacing
    scale = np.asarray(spacing, dtype=np.float64)
    pa = np.argwhere(a.data) * scale
    pb = np.argwhere(b.data) * scale
    if len(pa) == 0 or len(pb) == 0:
        raise UndefinedMetricError("hausdorff undefined for an empty mask")
    d_ab = float(cKDTree(pb).query(pa)[0].max())
    if mode == "directed":
        return d_ab
    d_ba = float(cKDTree(pa).query(pb)[0].max())
    return max(d_ab, d_ba)


def rmse(pred: MaskVolume, gt: MaskVolume) -> float:
    """Per-voxel root mean squared error between the two label fields."""
    _check_dims(pred, gt)
    diff = pred.data.astype(np.float64) - gt.data.astype(np.float64)
    return float(np.sqrt(np.mean(diff * diff)))


def volume_mm3(mask: MaskVolume) -> float:
    sz, sy, sx = mask.spacing
    return mask.voxel_count() * float(sz) * float(sy) * float(sx)


def evaluate_volume(pred: MaskVolume, gt: MaskVolume, volume_id: str = "",
                    seconds: float = None) -> VolumeReport:
    """All volume-level metrics for one prediction."""
    _check_dims(pred, gt)
    try:
        hd_d = hausdorff(pred, gt, mode="directed")
        hd_s = hausdorff(pred, gt, mode="symmetric")
    except UndefinedMetricError:
        hd_d = hd_s = None
    return VolumeReport(
        volume_id=volume_id,
        dsc=dsc(pred, gt),
        iou=iou(pred, gt),
        recall=recall(pred, gt),
        precision=precision(pred, gt),
        hd_directed=hd_d,
        hd_symmetric=hd_s,
        rmse=rmse(pred, gt),
        pred_voxels=pred.voxel_count(),
        gt_voxels=gt.voxel_count(),
        seconds=seconds,
    )


def _slice_dsc(a2d: np.ndarray, b2d: np.ndarray) -> float:
    inter, na, nb = _counts(a2d, b2d)
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def evaluate_slices(pred: MaskVolume, gt: MaskVolume, volume_id: str = "",
                    head_tail_n: int = 3) -> list:
    """Per-slice Dice along the stacking axis, head/tail slices flagged."""
    _check_dims(pred, gt)
    fg = [t for t in range(pred.dims[0]) if gt.data[t].any()]
    head_tail = set(fg[:head_tail_n]) | set(fg[-head_tail_n:]) if fg else set()
    out = []
    for t in range(pred.dims[0]):
        out.append(SliceReport(
            volume_id=volume_id,
            slice_index=t,
            dsc=_slice_dsc(pred.data[t], gt.data[t]),
            gt_pixels=int(np.count_nonzero(gt.data[t])),
            is_head_or_tail=t in head_tail,
        ))
    return out


def dsc_histogram(slice_reports, buckets=DSC_BUCKETS) -> dict:
    """Counts of slices per Dice interval; intervals are [lo, hi) except
    the last, which is closed. Counts partition the input."""
    edges = list(zip(buckets[:-1], buckets[1:]))
    counts = [0] * len(edges)
    for r in slice_reports:
        for j, (lo, hi) in enumerate(edges):
            last = j == len(edges) - 1
            if lo <= r.dsc < hi or (last and r.dsc == hi):
                counts[j] += 1
                break
    n = len(slice_reports)
    percent = [100.0 * c / n if n else 0.0 for c in counts]
    return {"edges": edges, "counts": counts, "percent": percent, "total": n}


def reliability_curve(volume_dscs) -> list:
    """Fraction of volumes whose Dice reaches each threshold on a fixed
    0.00 .. 1.00 grid (step 0.01). Non-increasing by construction."""
    vals = np.asarray(list(volume_dscs), dtype=np.float64)
    if vals.size == 0:
        raise DataError("reliability curve needs at least one score")
    return [(i / 100.0, float(np.mean(vals >= i / 100.0))) for i in range(101)]


@dataclass
class AgreementReport:
    n: int
    slope: float
    intercept: float
    r: float
    ba_mean: float
    ba_lo: float
    ba_hi: float
    inside_fraction: float


def volume_agreement(pred_mm3, gt_mm3) -> AgreementReport:
    """Least-squares fit of predicted against reference volumes plus
    Bland-Altman limits of agreement on the paired differences."""
    pred = np.asarray(list(pred_mm3), dtype=np.float64)
    gt = np.asarray(list(gt_mm3), dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConfigError(f"paired lengths differ: {pred.shape} vs {gt.shape}")
    if pred.size < 2:
        raise DataError("agreement statistics need at least 2 pairs")
    if np.ptp(gt) == 0.0:
        raise DataError("reference volumes are constant; fit undefined")
    slope, intercept = np.polyfit(gt, pred, 1)
    if np.ptp(pred) == 0.0:
        raise DataError("predicted volumes are constant; correlation undefined")
    r = float(np.corrcoef(gt, pred)[0, 1])
    diffs = pred - gt
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    lo, hi = mean - 1.96 * sd, mean + 1.96 * sd
    inside = float(np.mean((diffs >= lo) & (diffs <= hi)))
    return AgreementReport(int(pred.size), float(slope), float(intercept), r,
                           mean, lo, hi, inside)


def _cohort_stats(members) -> dict:
    scores = np.asarray([r.dsc for r in members], dtype=np.float64)
    out = {
        "count": len(members),
        "failed": int(np.count_nonzero(scores == 0.0)) if len(members) else 0,
        "mean_dsc": float(scores.mean()) if len(members) else None,
        "std_dsc": float(scores.std()) if len(members) else None,
        "slices": [(r.volume_id, r.slice_index) for r in members],
    }
    return out


def small_target_report(slice_reports, area_threshold: int = 300,
                        head_tail_n: int = 3) -> dict:
    """Dice statistics over the hard cohorts: the first/last n foreground
    slices of each volume, and slices whose reference area is at most
    area_threshold pixels. A slice with Dice 0 counts as failed."""
    by_volume = {}
    for r in slice_reports:
        by_volume.setdefault(r.volume_id, []).append(r)
    head_tail = []
    for reports in by_volume.values():
        fg = sorted((r for r in reports if r.gt_pixels > 0), key=lambda r: r.slice_index)
        seen = set()
        for r in fg[:head_tail_n] + fg[-head_tail_n:]:
            if r.slice_index not in seen:
                seen.add(r.slice_index)
                head_tail.append(r)
    small = [r for r in slice_reports if 0 < r.gt_pixels <= area_threshold]
    return {
        "area_threshold": area_threshold,
        "head_tail_n": head_tail_n,
        "head_tail": _cohort_stats(head_tail),
        "small": _cohort_stats(small),
    }


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.6f}"


VOLUME_COLUMNS = ("volume_id", "dsc", "iou", "recall", "precision", "hd_directed",
                  "hd_symmetric", "rmse", "pred_voxels", "gt_voxels", "seconds")
SLICE_COLUMNS = ("volume_id", "slice_index", "dsc", "gt_pixels", "is_head_or_tail")


def write_volume_csv(reports, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(VOLUME_COLUMNS)
        for r in reports:
            w.writerow([r.volume_id] + [_fmt(getattr(r, c)) for c in VOLUME_COLUMNS[1:]])


def write_slice_csv(reports, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SLICE_COLUMNS)
        for r in reports:
            w.writerow([r.volume_id] + [_fmt(getattr(r, c)) for c in SLICE_COLUMNS[1:]])


def summarize(volume_reports) -> dict:
    """Mean/std/min/max per metric across volumes (std is the sample
    deviation; undefined metrics are dropped from their column)."""
    out = {"n_volumes": len(volume_reports)}
    for col in ("dsc", "iou", "recall", "precision", "hd_directed", "hd_symmetric", "rmse"):
        vals = np.asarray([getattr(r, col) for r in volume_reports
                           if getattr(r, col) is not None], dtype=np.float64)
        if vals.size == 0:
            out[col] = None
            continue
        out[col] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            "min": float(vals.min()),
            "max": float(vals.max()),
        }
    return out
