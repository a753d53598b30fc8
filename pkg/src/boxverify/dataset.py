"""Dataset model and JSON ingestion.

Images carry image-level class labels, a pool of candidate boxes with
precomputed feature vectors and an objectness score, and (optionally)
hidden ground-truth boxes.  Ground truth exists only to drive simulated
annotators and evaluation; the training loop and the detector must never
read it, which is why access goes through :func:`ground_truth_boxes`
rather than ad-hoc attribute walks.

File format (UTF-8 JSON)::

    {"classes": [...], "feature_dim": int, "images": [
        {"id": str, "width": int, "height": int, "labels": [...],
         "image_uri": str?,                      # optional, human display
         "ground_truth": {class: [[x1,y1,x2,y2], ...]}?,
         "proposals": [{"box": [x1,y1,x2,y2], "features": [...],
                        "objectness": float}, ...]},
        ...]}

All boxes are half-open real coordinates (see :mod:`boxverify.geometry`).
PASCAL-style sources with inclusive pixel coordinates must be converted
by an external importer that adds 1 to x2/y2 and exposes the
difficult/truncated flags it filtered on; no XML parsing lives here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box

__all__ = [
    "DatasetError",
    "ProposalRecord",
    "ImageRecord",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "dataset_from_dict",
    "dataset_to_dict",
    "ground_truth_boxes",
]


class DatasetError(ValueError):
    """Raised for malformed or invariant-violating dataset input."""


@dataclass(frozen=True)
class ProposalRecord:
    box: Box
    features: np.ndarray
    objectness: float


@dataclass
class ImageRecord:
    image_id: str
    width: int
    height: int
    labels: tuple[str, ...]
    boxes: np.ndarray          # (n, 4) float64, proposal boxes
    features: np.ndarray       # (n, feature_dim) float64
    objectness: np.ndarray     # (n,) float64 in (0, 1]
    ground_truth: dict[str, list[Box]] | None = None
    image_uri: str | None = None

    @property
    def n_proposals(self) -> int:
        return self.boxes.shape[0]

    def proposal(self, i: int) -> ProposalRecord:
        return ProposalRecord(
            box=Box.from_sequence(self.boxes[i]),
            features=self.features[i],
            objectness=float(self.objectness[i]),
        )

    def proposal_box(self, i: int) -> Box:
        return Box.from_sequence(self.boxes[i])


@dataclass
class Dataset:
    classes: list[str]
    feature_dim: int
    images: list[ImageRecord]
    _by_id: dict[str, ImageRecord] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {im.image_id: im for im in self.images}

    def image(self, image_id: str) -> ImageRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise KeyError(f"unknown image_id {image_id!r}") from None

    def labeled_images(self, class_name: str) -> list[ImageRecord]:
        """Images whose label set contains class_name, in id order."""
        if class_name not in self.classes:
            raise DatasetError(f"unknown class {class_name!r}")
        return sorted(
            (im for im in self.images if class_name in im.labels),
            key=lambda im: im.image_id,
        )

    @property
    def has_ground_truth(self) -> bool:
        return any(im.ground_truth is not None for im in self.images)


def ground_truth_boxes(dataset: Dataset, image_id: str, class_name: str) -> list[Box]:
    """Hidden ground-truth access for oracles and evaluation only.

    The loop, detector and pruning modules must not call this.
    """
    im = dataset.image(image_id)
    if im.ground_truth is None:
        raise DatasetError(f"image {image_id!r} carries no ground truth")
    boxes = im.ground_truth.get(class_name, [])
    if not boxes:
        raise DatasetError(
            f"image {image_id!r} has no ground truth for class {class_name!r}"
        )
    return boxes


# --- validation --------------------------------------------------------------

def _check_box_in_bounds(seq, width, height, image_id, what) -> Box:
    try:
        b = Box.from_sequence(seq)
    except (ValueError, TypeError) as exc:
        raise DatasetError(f"image {image_id!r}: bad {what} box {seq!r}: {exc}") from exc
    if b.x1 < 0 or b.y1 < 0 or b.x2 > width or b.y2 > height:
        raise DatasetError(
            f"image {image_id!r}: {what} box {b.as_tuple()} outside "
            f"[0,{width})x[0,{height})"
        )
    return b


def _validate_image(raw: dict, classes: list[str], feature_dim: int) -> ImageRecord:
    image_id = raw.get("id")
    if not isinstance(image_id, str) or not image_id:
        raise DatasetError(f"image entry without a string 'id': {raw.get('id')!r}")
    width, height = raw.get("width"), raw.get("height")
    if not (isinstance(width, int) and width > 0 and isinstance(height, int) and height > 0):
        raise DatasetError(f"image {image_id!r}: width/height must be positive integers")
    labels = raw.get("labels")
    if not isinstance(labels, list) or not all(isinstance(c, str) for c in labels):
        raise DatasetError(f"image {image_id!r}: 'labels' must be a list of class names")
    for c in labels:
        if c not in classes:
            raise DatasetError(f"image {image_id!r}: label {c!r} not in dataset classes")

    proposals = raw.get("proposals")
    if not isinstance(proposals, list) or len(proposals) < 1:
        raise DatasetError(f"image {image_id!r}: needs at least one proposal")
    n = len(proposals)
    boxes = np.empty((n, 4), dtype=np.float64)
    features = np.empty((n, feature_dim), dtype=np.float64)
    objectness = np.empty(n, dtype=np.float64)
    for i, p in enumerate(proposals):
        b = _check_box_in_bounds(p.get("box"), width, height, image_id, f"proposal[{i}]")
        boxes[i] = b.as_tuple()
        feats = p.get("features")
        if not isinstance(feats, list) or len(feats) != feature_dim:
            raise DatasetError(
                f"image {image_id!r}: proposal[{i}] features length "
                f"{len(feats) if isinstance(feats, list) else '?'} != feature_dim {feature_dim}"
            )
        features[i] = feats
        obj = p.get("objectness")
        if not isinstance(obj, (int, float)) or not (0.0 < obj <= 1.0):
            raise DatasetError(
                f"image {image_id!r}: proposal[{i}] objectness {obj!r} not in (0, 1]"
            )
        objectness[i] = obj
    if not np.all(np.isfinite(features)):
        raise DatasetError(f"image {image_id!r}: non-finite feature values")

    gt = None
    raw_gt = raw.get("ground_truth")
    if raw_gt is not None:
        if not isinstance(raw_gt, dict):
            raise DatasetError(f"image {image_id!r}: 'ground_truth' must be an object")
        gt = {}
        for cls, entries in raw_gt.items():
            if cls not in classes:
                raise DatasetError(f"image {image_id!r}: ground-truth class {cls!r} unknown")
            gt[cls] = [
                _check_box_in_bounds(e, width, height, image_id, f"ground_truth[{cls}]")
                for e in entries
            ]
        for c in labels:
            if not gt.get(c):
                raise DatasetError(
                    f"image {image_id!r}: label {c!r} has no ground-truth box"
                )

    uri = raw.get("image_uri")
    if uri is not None and not isinstance(uri, str):
        raise DatasetError(f"image {image_id!r}: 'image_uri' must be a string")

    return ImageRecord(
        image_id=image_id,
        width=width,
        height=height,
        labels=tuple(labels),
        boxes=boxes,
        features=features,
        objectness=objectness,
        ground_truth=gt,
        image_uri=uri,
    )


def dataset_from_dict(raw: dict) -> Dataset:
    classes = raw.get("classes")
    if not isinstance(classes, list) or not classes or not all(isinstance(c, str) for c in classes):
        raise DatasetError("'classes' must be a non-empty list of names")
    if len(set(classes)) != len(classes):
        raise DatasetError("'classes' contains duplicates")
    feature_dim = raw.get("feature_dim")
    if not isinstance(feature_dim, int) or feature_dim < 1:
        raise DatasetError("'feature_dim' must be a positive integer")
    raw_images = raw.get("images")
    if not isinstance(raw_images, list):
        raise DatasetError("'images' must be a list")
    images = [_validate_image(r, classes, feature_dim) for r in raw_images]
    seen = set()
    for im in images:
        if im.image_id in seen:
            raise DatasetError(f"duplicate image_id {im.image_id!r}")
        seen.add(im.image_id)
    return Dataset(classes=list(classes), feature_dim=feature_dim, images=images)


def dataset_to_dict(dataset: Dataset) -> dict:
    images = []
    for im in dataset.images:
        entry = {
            "id": im.image_id,
            "width": im.width,
            "height": im.height,
            "labels": list(im.labels),
            "proposals": [
                {
                    "box": [float(v) for v in im.boxes[i]],
                    "features": [float(v) for v in im.features[i]],
                    "objectness": float(im.objectness[i]),
                }
                for i in range(im.n_proposals)
            ],
        }
        if im.image_uri is not None:
            entry["image_uri"] = im.image_uri
        if im.ground_truth is not None:
            entry["ground_truth"] = {
                cls: [list(b.as_tuple()) for b in boxes]
                for cls, boxes in im.ground_truth.items()
            }
        images.append(entry)
    return {"classes": list(dataset.classes), "feature_dim": dataset.feature_dim, "images": images}


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise DatasetError(f"{path}: top level must be a JSON object")
    return dataset_from_dict(raw)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(dataset)), encoding="utf-8")
