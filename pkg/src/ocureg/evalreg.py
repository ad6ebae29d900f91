"""Tracking evaluation, SRL-based pair filtering, and pairwise mosaics.

Tracking error is the mean Euclidean distance, in pixels and as a
percentage of image width, between points tracked from the target frame
into the source frame and the source-frame annotations of the same ids.

Annotations travel as CSV with columns ``frame_id, point_id, u, v,
region`` (region is ``sclera`` or ``cornea``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, Pose6DoF
from .imaging import DepthMap, Frame, PixelMask, SegMap, eyelid_mask
from .losses import SRL_MAX
from .warp import inverse_warp, track_points

# Mean tracking errors (px, % of image width) reported on a clinical
# slit-lamp test set for this family of estimators.  Recorded as reference
# anchors only: they depend on a private dataset and trained networks, so
# they are not reproducible from this package.  Synthetic suites verify
# the same ordering instead.
CLINICAL_REFERENCE_ERRORS = {
    "photometric_baseline": (29.08, 1.82),
    "photometric_baseline_framestep": (27.19, 1.70),
    "semantic_only": (22.48, 1.40),
    "semantic_and_sphere": (7.7, 0.48),
    "inter_grader": (4.81, 0.30),
}

# Fraction of frames removed by the 5% SRL filter on the same clinical
# recordings, recorded as a documented expectation, not a testable value.
CLINICAL_REFERENCE_REMOVAL_FRACTION = 0.35


@dataclass(frozen=True)
class AnnotatedPoint:
    point_id: str
    u: float
    v: float
    region: str  # "sclera" | "cornea"


@dataclass(frozen=True)
class AnnotationSet:
    """Named points per frame plus one (source, target) pairing."""

    points: dict[str, tuple[AnnotatedPoint, ...]]  # frame_id -> points
    source_id: str
    target_id: str

    def __post_init__(self):
        for frame_id, pts in self.points.items():
            ids = [p.point_id for p in pts]
            if len(ids) != len(set(ids)):
                dup = sorted({i for i in ids if ids.count(i) > 1})
                raise ValueError(f"frame {frame_id!r} has duplicate point ids {dup}")
        for fid in (self.source_id, self.target_id):
            if fid not in self.points:
                raise ValueError(f"paired frame {fid!r} has no annotations")
        if not self.shared_ids():
            raise ValueError(
                f"paired frames {self.source_id!r} and {self.target_id!r} share no point ids"
            )

    def shared_ids(self) -> list[str]:
        src = {p.point_id for p in self.points[self.source_id]}
        tgt = {p.point_id for p in self.points[self.target_id]}
        return sorted(src & tgt)

    def frame_points(self, frame_id: str) -> dict[str, AnnotatedPoint]:
        return {p.point_id: p for p in self.points[frame_id]}


@dataclass(frozen=True)
class EvalReport:
    """Per-point and aggregate tracking errors for one pair."""

    errors_px: dict[str, float]  # point_id -> Euclidean error
    mean_px: float
    mean_percent: float  # 100 * mean_px / image width
    region_counts: dict[str, int]
    excluded: tuple[str, ...] = field(default_factory=tuple)  # invalid under the warp

    def summary(self) -> str:
        lines = [
            f"points evaluated: {len(self.errors_px)}"
            + (f" (excluded {len(self.excluded)})" if self.excluded else ""),
            f"mean error: {self.mean_px:.3f} px ({self.mean_percent:.3f}% of width)",
        ]
        for region, count in sorted(self.region_counts.items()):
            lines.append(f"  {region}: {count} points")
        return "\n".join(lines)


def read_annotations(path, source_id: str, target_id: str) -> AnnotationSet:
    """Load an annotation CSV and pair two of its frames."""
    points: dict[str, list[AnnotatedPoint]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"frame_id", "point_id", "u", "v", "region"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            missing = sorted(required - set(reader.fieldnames or []))
            raise ValueError(f"{path}: annotation CSV missing columns {missing}")
        for row in reader:
            points.setdefault(row["frame_id"], []).append(
                AnnotatedPoint(
                    point_id=row["point_id"],
                    u=float(row["u"]),
                    v=float(row["v"]),
                    region=row["region"],
                )
            )
    return AnnotationSet(
        points={k: tuple(v) for k, v in points.items()},
        source_id=source_id,
        target_id=target_id,
    )


def write_annotations(path, points_by_frame: dict[str, tuple[AnnotatedPoint, ...]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_id", "point_id", "u", "v", "region"])
        for frame_id in sorted(points_by_frame):
            for p in points_by_frame[frame_id]:
                writer.writerow([frame_id, p.point_id, repr(p.u), repr(p.v), p.region])


def evaluate_tracking(
    ann: AnnotationSet, depth: DepthMap, pose: Pose6DoF, k: Intrinsics
) -> EvalReport:
    """Track the target-frame annotations into the source frame and score them.

    ``depth`` is the target frame's depth and ``pose`` the target-to-source
    transform (the same inputs the warp uses).  Points that cannot be
    tracked (non-positive depth, behind camera) are excluded and listed.
    """
    ids = ann.shared_ids()
    tgt = ann.frame_points(ann.target_id)
    src = ann.frame_points(ann.source_id)
    pts = np.array([[tgt[i].u, tgt[i].v] for i in ids])
    mapped, valid = track_points(pts, depth, pose, k)

    errors: dict[str, float] = {}
    region_counts: dict[str, int] = {}
    excluded = []
    for idx, point_id in enumerate(ids):
        if not valid[idx]:
            excluded.append(point_id)
            continue
        du = mapped[idx, 0] - src[point_id].u
        dv = mapped[idx, 1] - src[point_id].v
        errors[point_id] = math.hypot(du, dv)
        region = tgt[point_id].region
        region_counts[region] = region_counts.get(region, 0) + 1

    mean_px = float(np.mean(list(errors.values()))) if errors else math.nan
    return EvalReport(
        errors_px=errors,
        mean_px=mean_px,
        mean_percent=100.0 * mean_px / k.width,
        region_counts=region_counts,
        excluded=tuple(excluded),
    )


def write_report(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["point_id", "error_px"])
        for point_id in sorted(report.errors_px):
            writer.writerow([point_id, repr(report.errors_px[point_id])])
        writer.writerow(["mean_px", repr(report.mean_px)])
        writer.writerow(["mean_percent", repr(report.mean_percent)])


def srl_percent(srl: float) -> float:
    """SRL as a percentage of its maximum attainable value (2.0)."""
    return 100.0 * srl / SRL_MAX

def filter_pairs(pair_srl, threshold_percent: float):
    """Keep pairs whose normalized SRL is below the threshold.

    ``pair_srl`` is a sequence of ``(pair_key, srl_value)``.  Returns
    ``(kept_keys, removed_fraction)``; order is preserved.
    """
    items = list(pair_srl)
    kept = [key for key, srl in items if srl_percent(srl) < threshold_percent]
    removed = 1.0 - len(kept) / len(items) if items else 0.0
    return kept, removed


def build_mosaic(
    source: Frame,
    target: Frame,
    depth: DepthMap,
    pose: Pose6DoF,
    k: Intrinsics,
    target_keep: PixelMask | None = None,
) -> tuple[Frame, np.ndarray]:
    """Composite a registered pair into one mosaic.

    Target pixels win where the target covers (``target_keep``, defaults
    to everywhere); elsewhere the warped source fills in where its warp is
    valid.  Returns the mosaic and a provenance map: 0 = uncovered,
    1 = target, 2 = warped source.
    """
    h, w = depth.data.shape
    keep = np.ones((h, w), dtype=bool) if target_keep is None else target_keep.data
    wr = inverse_warp(source, depth, pose, k, mask=None)
    out = np.zeros_like(np.asarray(target.data))
    coverage = np.zeros((h, w), dtype=np.uint8)
    out[keep] = target.data[keep]
    coverage[keep] = 1
    fill = ~keep & wr.valid.data
    out[fill] = wr.warped[fill]
    coverage[fill] = 2
    return Frame(out), coverage


def mosaic_from_segmaps(
    source: Frame,
    source_seg: SegMap,
    target: Frame,
    target_seg: SegMap,
    depth: DepthMap,
    pose: Pose6DoF,
    k: Intrinsics,
) -> tuple[Frame, np.ndarray]:
    """Mosaic keeping the target's ocular surface and filling its eyelid
    region from the warped source (the common use: recorded frames where
    the lid hides part of the surface)."""
    return build_mosaic(source, target, depth, pose, k, target_keep=eyelid_mask(target_seg))
