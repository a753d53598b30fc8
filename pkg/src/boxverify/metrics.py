"""Evaluation: CorLoc, VOC-style average precision, annotation-time
accounting, and trade-off-curve export.

Average precision uses the 11-point interpolation (the 2007 flavour):
AP = mean over recall thresholds {0, 0.1, ..., 1.0} of the maximum
precision at recall >= threshold, with greedy one-to-one matching of
score-ranked detections to ground truth at IoU >= 0.5.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .annotator import VerificationEvent
from .dataset import Dataset, ground_truth_boxes
from .detector import Detection
from .geometry import Box, iou
from .loop import CurvePoint, RunState

__all__ = [
    "DRAW_SECONDS_PER_BOX",
    "DRAW_SECONDS_PER_BOX_QC",
    "corloc",
    "state_corloc",
    "make_corloc_fn",
    "voc_ap",
    "mean_ap",
    "annotation_time",
    "drawing_baseline_seconds",
    "export_curves",
    "read_curves",
    "summary_report",
]

# measured drawing costs for the fully supervised baseline
DRAW_SECONDS_PER_BOX = 26.0
DRAW_SECONDS_PER_BOX_QC = 42.0


def corloc(detections: Mapping[str, Detection | None], dataset: Dataset,
           class_name: str) -> float:
    """Fraction of labeled images whose detection reaches IoU 0.5 with
    some ground-truth instance of the class.  Missing detections count
    as failures."""
    images = dataset.labeled_images(class_name)
    if not images:
        raise ValueError(f"no images labeled {class_name!r}")
    correct = 0
    for im in images:
        det = detections.get(im.image_id)
        if det is None:
            continue
        gts = ground_truth_boxes(dataset, im.image_id, class_name)
        if max(iou(g, det.box) for g in gts) >= 0.5:
            correct += 1
    return correct / len(images)


def state_corloc(state: RunState, dataset: Dataset) -> float:
    """CorLoc of a run's combined localization state: fixed positives
    plus the open images' current detections (exhausted images fail)."""
    merged: dict[str, Detection] = dict(state.current)
    merged.update(state.fixed)
    return corloc(merged, dataset, state.class_name)


def make_corloc_fn(dataset: Dataset):
    """Evaluator to inject into :func:`boxverify.loop.run` as corloc_fn."""
    def _fn(state: RunState) -> float:
        return state_corloc(state, dataset)
    return _fn


def _rank_key(det: Detection):
    return (-det.score, det.image_id, det.box.as_tuple())


def voc_ap(detections: Sequence[Detection],
           gt: Mapping[str, Sequence[Box]],
           iou_threshold: float = 0.5,
           difficult: Mapping[str, Sequence[bool]] | None = None) -> float | None:
    """11-point interpolated average precision.

    ``gt`` maps image_id -> ground-truth boxes of one class; ``difficult``
    optionally marks instances to exclude (matched difficult instances
    are neither true nor false positives).  Returns None when there is no
    non-difficult ground truth, in which case the class is excluded from
    the mean.
    """
    difficult = difficult or {}
    n_positive = 0
    for image_id, boxes in gt.items():
        flags = difficult.get(image_id, [False] * len(boxes))
        n_positive += sum(1 for f in flags if not f)
    if n_positive == 0:
        return None

    ranked = sorted(detections, key=_rank_key)
    matched: dict[str, set[int]] = {iid: set() for iid in gt}
    tp = np.zeros(len(ranked))
    fp = np.zeros(len(ranked))
    for i, det in enumerate(ranked):
        boxes = gt.get(det.image_id, [])
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(boxes):
            v = iou(g, det.box)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_iou >= iou_threshold:
            flags = difficult.get(det.image_id, [False] * len(boxes))
            if flags[best_j]:
                continue  # ignore entirely
            if best_j in matched[det.image_id]:
                fp[i] = 1.0  # duplicate of an already-claimed instance
            else:
                matched[det.image_id].add(best_j)
                tp[i] = 1.0
        else:
            fp[i] = 1.0

    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(fp)
    recall = cum_tp / n_positive
    denom = cum_tp + cum_fp
    precision = np.where(denom > 0, cum_tp / np.maximum(denom, 1), 0.0)

    ap = 0.0
    for r in np.linspace(0.0, 1.0, 11):
        mask = recall >= r - 1e-12
        ap += float(precision[mask].max()) if mask.any() else 0.0
    return ap / 11.0


def mean_ap(per_class: Mapping[str, float | None]) -> float | None:
    values = [v for v in per_class.values() if v is not None]
    return float(np.mean(values)) if values else None


def annotation_time(events: Sequence[VerificationEvent]) -> float:
    """Total verification seconds: the exact sum of event costs."""
    return math.fsum(ev.elapsed_seconds for ev in events)


def drawing_baseline_seconds(n_images: int, per_box: float = DRAW_SECONDS_PER_BOX) -> float:
    """Cost of the fully supervised alternative: one drawn box per image."""
    return n_images * per_box


def export_curves(runs: Sequence[tuple[str, Sequence[CurvePoint]]],
                  path: str | Path) -> None:
    """CSV trade-off curves: one row per point, grouped by run label."""
    if not runs:
        raise ValueError("no curves to export")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "iteration", "verifications", "seconds",
                         "corloc", "fixed_fraction"])
        for label, points in runs:
            for p in points:
                writer.writerow([label, p.iteration, p.verifications,
                                 repr(p.seconds), repr(p.corloc),
                                 repr(p.fixed_fraction)])


def read_curves(path: str | Path) -> list[tuple[str, list[CurvePoint]]]:
    out: dict[str, list[CurvePoint]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["label"], []).append(CurvePoint(
                iteration=int(row["iteration"]),
                verifications=int(row["verifications"]),
                seconds=float(row["seconds"]),
                corloc=float(row["corloc"]),
                fixed_fraction=float(row["fixed_fraction"]),
            ))
    return list(out.items())


def summary_report(per_class: Mapping[str, dict], verification_seconds: float,
                   n_images: int) -> dict:
    """Summary JSON payload: per-class corloc/ap, mAP, and hours."""
    aps = {cls: entry.get("ap") for cls, entry in per_class.items()}
    return {
        "classes": {cls: dict(entry) for cls, entry in per_class.items()},
        "mAP": mean_ap(aps),
        "hours": verification_seconds / 3600.0,
        "verification_seconds": verification_seconds,
        "drawing_hours": drawing_baseline_seconds(n_images) / 3600.0,
        "drawing_hours_qc": drawing_baseline_seconds(n_images, DRAW_SECONDS_PER_BOX_QC) / 3600.0,
    }
