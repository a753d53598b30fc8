"""Linear proposal scorer: training, scoring, test-time detection.

The scorer is a regularized binary linear classifier over the supplied
feature vectors, trained by deterministic full-batch gradient descent
with backtracking (the training loss never increases between accepted
steps).  Positive and negative classes are weighted equally regardless
of their counts.  Features are standardized internally; the returned
weights act on raw features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, ImageRecord, ProposalRecord
from .geometry import Box, iou_many

__all__ = [
    "TrainConfig",
    "ScorerModel",
    "Detection",
    "sample_background",
    "train_detector",
    "score_proposals",
    "nms_indices",
    "detect_test",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "hinge"            # "hinge" | "logistic"
    l2: float = 1e-3
    iterations: int = 200
    lr: float = 1.0
    max_bg_per_image: int = 50

    def __post_init__(self):
        if self.loss not in ("hinge", "logistic"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.iterations < 1 or self.lr <= 0 or self.l2 < 0:
            raise ValueError("bad training hyper-parameters")


@dataclass
class ScorerModel:
    class_name: str
    feature_dim: int
    weights: np.ndarray      # (feature_dim,)
    bias: float
    meta: dict = field(default_factory=dict)

    def score(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.bias


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_name: str
    box: Box
    score: float
    proposal_index: int | None = None


def sample_background(dataset: Dataset, positives: list[Detection],
                      config: TrainConfig, seed: int) -> list[ProposalRecord]:
    """Background proposals: IoU in [0, 0.5) with every positive of their image.

    At most ``config.max_bg_per_image`` per image, drawn uniformly.
    """
    if not positives:
        raise ValueError("cannot sample background without positives")
    by_image: dict[str, list[Detection]] = {}
    for det in positives:
        by_image.setdefault(det.image_id, []).append(det)
    rng = np.random.default_rng(seed)
    out: list[ProposalRecord] = []
    for image_id in sorted(by_image):
        im = dataset.image(image_id)
        eligible = np.ones(im.n_proposals, dtype=bool)
        for det in by_image[image_id]:
            eligible &= iou_many(im.boxes, det.box) < 0.5
        idx = np.flatnonzero(eligible)
        if len(idx) == 0:
            continue
        if len(idx) > config.max_bg_per_image:
            idx = rng.choice(idx, size=config.max_bg_per_image, replace=False)
            idx.sort()
        out.extend(im.proposal(int(i)) for i in idx)
    return out


def _loss_and_grad(w, b, X, y, sw, l2, loss):
    s = X @ w + b
    if loss == "hinge":
        margin = 1.0 - y * s
        active = margin > 0
        value = float(np.sum(sw * np.maximum(margin, 0.0)))
        coef = np.where(active, -y * sw, 0.0)
    else:  # logistic
        z = -y * s
        value = float(np.sum(sw * np.logaddexp(0.0, z)))
        coef = -y * sw / (1.0 + np.exp(-z))
    gw = X.T @ coef + l2 * w
    gb = float(np.sum(coef))
    value += 0.5 * l2 * float(w @ w)
    return value, gw, gb


def train_detector(positive_features: np.ndarray, background_features: np.ndarray,
                   config: TrainConfig | None = None, seed: int = 0,
                   class_name: str = "", iteration: int | None = None) -> ScorerModel:
    """Fit the linear scorer; deterministic in (inputs, config, seed).

    Degenerate input (all rows identical) yields a zero-weight model
    flagged with ``meta["warning"]``.
    """
    config = config or TrainConfig()
    pos = np.asarray(positive_features, dtype=np.float64)
    neg = np.asarray(background_features, dtype=np.float64)
    if pos.ndim != 2 or neg.ndim != 2 or pos.shape[1] != neg.shape[1]:
        raise ValueError("positive/background feature matrices disagree")
    if len(pos) == 0:
        raise ValueError("no positive examples")
    if len(neg) == 0:
        raise ValueError("no background examples")
    dim = pos.shape[1]
    meta = {
        "iteration": iteration,
        "n_positives": int(len(pos)),
        "n_background": int(len(neg)),
        "seed": seed,
    }

    X = np.vstack([pos, neg])
    if np.allclose(X, X[0], atol=1e-12):
        meta["warning"] = "degenerate-features"
        meta["loss_history"] = []
        return ScorerModel(class_name, dim, np.zeros(dim), 0.0, meta)

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < 1e-9, 1.0, sd)
    Xs = (X - mu) / sd
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    # class-balanced weights: each side contributes 1/2 of the data term
    sw = np.concatenate([
        np.full(len(pos), 0.5 / len(pos)),
        np.full(len(neg), 0.5 / len(neg)),
    ])

    w = np.zeros(dim)
    b = 0.0
    lr = config.lr
    value, gw, gb = _loss_and_grad(w, b, Xs, y, sw, config.l2, config.loss)
    history = [value]
    for _ in range(config.iterations):
        stepped = False
        for _ in range(40):
            w2 = w - lr * gw
            b2 = b - lr * gb
            v2, gw2, gb2 = _loss_and_grad(w2, b2, Xs, y, sw, config.l2, config.loss)
            if v2 <= value:
                w, b, value, gw, gb = w2, b2, v2, gw2, gb2
                lr = min(lr * 1.1, 50.0)
                stepped = True
                break
            lr *= 0.5
        history.append(value)
        if not stepped:
            break
        if np.linalg.norm(gw) < 1e-10 and abs(gb) < 1e-10:
            break

    meta["loss_history"] = history
    # fold standardization back into raw-space weights
    w_raw = w / sd
    b_raw = b - float((w * (mu / sd)).sum())
    if not (np.all(np.isfinite(w_raw)) and math.isfinite(b_raw)):
        raise RuntimeError("training diverged to non-finite weights")
    return ScorerModel(class_name, dim, w_raw, b_raw, meta)


def score_proposals(model: ScorerModel, image: ImageRecord,
                    use_objectness: bool = False,
                    objectness_weight: float = 1.0) -> np.ndarray:
    """Linear scores, optionally plus objectness in the log domain
    (used only during MIL initialization)."""
    if image.features.shape[1] != model.feature_dim:
        raise ValueError(
            f"feature dim {image.features.shape[1]} != model dim {model.feature_dim}"
        )
    scores = model.score(image.features)
    if use_objectness:
        scores = scores + objectness_weight * np.log(image.objectness)
    return scores


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> list[int]:
    """Greedy non-maximum suppression; score ties break to the lower index."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    kept: list[int] = []
    for i in order:
        b = Box.from_sequence(boxes[i])
        if all(iou_many(boxes[[k]], b)[0] < iou_thresh for k in kept):
            kept.append(int(i))
    return kept


def detect_test(model: ScorerModel, dataset: Dataset, nms_iou: float = 0.3,
                score_min: float = -math.inf) -> list[Detection]:
    """Score every image, threshold, suppress, return survivors
    (per image, best first)."""
    out: list[Detection] = []
    for im in dataset.images:
        scores = score_proposals(model, im)
        keep = np.flatnonzero(scores >= score_min)
        if len(keep) == 0:
            continue
        kept = nms_indices(im.boxes[keep], scores[keep], nms_iou)
        for k in kept:
            i = int(keep[k])
            out.append(Detection(
                image_id=im.image_id,
                class_name=model.class_name,
                box=im.proposal_box(i),
                score=float(scores[i]),
                proposal_index=i,
            ))
    return out


def save_model(model: ScorerModel, path: str | Path) -> None:
    payload = {
        "class": model.class_name,
        "feature_dim": model.feature_dim,
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
        "meta": {k: v for k, v in model.meta.items() if k != "loss_history"},
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_model(path: str | Path) -> ScorerModel:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    weights = np.asarray(raw["weights"], dtype=np.float64)
    if len(weights) != raw["feature_dim"]:
        raise ValueError("weight length disagrees with feature_dim")
    return ScorerModel(raw["class"], raw["feature_dim"], weights,
                       float(raw["bias"]), dict(raw.get("meta", {})))
