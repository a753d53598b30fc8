"""Multiple-instance-learning initialization.

Produces the initial per-image detections for a class before any
verification happens, by alternating detector retraining with
relocalization over the full proposal pools.

Round zero trains on whole images: the positive feature of an image is
the feature vector of its proposal best covering the full image
rectangle, negatives are the image's small proposals (IoU < 0.5 with the
image rectangle).  Later rounds are multi-fold: images are partitioned
into folds by a seeded hash of their id, and each fold is relocalized by
a detector trained on the *other* folds' current detections, which
prevents the premature lock-in of re-finding one's own training box.
Objectness is blended into the relocalization scores (log-domain); it is
the signal that pulls the search away from the degenerate whole-image
optimum.  Iteration stops when a round reproduces the previous round's
selections exactly, or at the round cap.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .detector import Detection, TrainConfig, sample_background, train_detector, score_proposals
from .geometry import Box, iou_many

__all__ = ["MilConfig", "fold_of", "run_mil"]


@dataclass(frozen=True)
class MilConfig:
    folds: int = 10
    max_iterations: int = 10
    use_objectness: bool = True
    objectness_weight: float = 1.0
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.folds < 1:
            raise ValueError("folds must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def fold_of(image_id: str, folds: int, seed: int) -> int:
    digest = hashlib.sha256(f"{seed}|{image_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % folds


def _argmax_detection(dataset, image, model, cfg, class_name,
                      restrict=None) -> Detection:
    scores = score_proposals(model, image, use_objectness=cfg.use_objectness,
                             objectness_weight=cfg.objectness_weight)
    idx = int(np.argmax(scores))  # np.argmax returns the first (lowest) maximizer
    return Detection(
        image_id=image.image_id,
        class_name=class_name,
        box=image.proposal_box(idx),
        score=float(scores[idx]),
        proposal_index=idx,
    )


def _whole_image_positives(images) -> np.ndarray:
    feats = []
    for im in images:
        rect = Box(0.0, 0.0, float(im.width), float(im.height))
        overlap = iou_many(im.boxes, rect)
        feats.append(im.features[int(np.argmax(overlap))])
    return np.asarray(feats)


def run_mil(dataset: Dataset, class_name: str, config: MilConfig | None = None
            ) -> dict[str, Detection]:
    """Initial detections for every image labeled with ``class_name``."""
    cfg = config or MilConfig()
    images = dataset.labeled_images(class_name)
    if not images:
        raise ValueError(f"no images labeled {class_name!r}")
    folds = cfg.folds
    if folds > len(images):
        warnings.warn(
            f"{class_name}: folds reduced from {folds} to {len(images)} (image count)"
        )
        folds = len(images)

    # round 0: whole-image positives, one shared detector
    rect_positives = _whole_image_positives(images)
    whole_dets = [
        Detection(im.image_id, class_name,
                  Box(0.0, 0.0, float(im.width), float(im.height)), 0.0)
        for im in images
    ]
    bg = sample_background(dataset, whole_dets, cfg.train, seed=cfg.seed)
    bg_feats = np.asarray([p.features for p in bg])
    model = train_detector(rect_positives, bg_feats, cfg.train,
                           seed=cfg.seed, class_name=class_name, iteration=0)
    current = {im.image_id: _argmax_detection(dataset, im, model, cfg, class_name)
               for im in images}

    fold_index = {im.image_id: fold_of(im.image_id, folds, cfg.seed) for im in images}
    for round_no in range(1, cfg.max_iterations + 1):
        previous = {iid: det.proposal_index for iid, det in current.items()}
        for f in range(folds):
            train_imgs = [im for im in images if fold_index[im.image_id] != f]
            reloc_imgs = [im for im in images if fold_index[im.image_id] == f]
            if not reloc_imgs:
                continue
            if not train_imgs:  # folds == 1: degenerate single-fold MIL
                train_imgs = images
            positives = [current[im.image_id] for im in train_imgs]
            pos_feats = np.asarray([
                dataset.image(d.image_id).features[d.proposal_index]
                for d in positives
            ])
            bg = sample_background(dataset, positives, cfg.train,
                                   seed=cfg.seed + 1000 * round_no + f)
            if not bg:
                continue  # keep the fold's detections; nothing to train on
            bg_feats = np.asarray([p.features for p in bg])
            model = train_detector(pos_feats, bg_feats, cfg.train,
                                   seed=cfg.seed, class_name=class_name,
                                   iteration=round_no)
            for im in reloc_imgs:
                current[im.image_id] = _argmax_detection(dataset, im, model, cfg, class_name)
        if all(current[iid].proposal_index == previous[iid] for iid in previous):
            break
    return current
