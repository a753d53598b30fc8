"""Synthetic datasets for desk-scale experiments.

Each image gets one hidden ground-truth box per labeled class, a pool of
proposals (multi-scale grid boxes, jittered near-copies of the ground
truth, random fillers), and per-proposal features drawn from
class-conditional clusters: a proposal samples the foreground cluster of
a class iff its IoU with that class' ground truth is at least 0.5,
otherwise the shared background cluster.  Cluster noise is clipped at
two standard deviations so ``separation=1.0`` yields strictly linearly
separable features, while smaller values overlap the clusters and make
the detector fallible.  Objectness correlates with the best ground-truth
IoU plus uniform noise, which is what makes whole-image-initialized MIL
able (but not trivially able) to find objects.

Everything is a pure function of (config, seed): the same pair produces
a byte-identical dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, ImageRecord
from .geometry import Box, iou

__all__ = [
    "SyntheticConfig",
    "generate_synthetic",
    "separable_benchmark",
    "noisy_benchmark",
]

_CLUSTER_SCALE = 5.0   # distance between cluster means at separation=1.0
_NOISE_CLIP = 2.0      # features live within +-2 sigma of their mean


@dataclass(frozen=True)
class SyntheticConfig:
    n_images: int = 200
    classes: tuple[str, ...] = ("target",)
    width: int = 128
    height: int = 128
    proposals_per_image: int = 100
    feature_dim: int = 16
    separation: float = 1.0       # [0, 1]: margin between fg/bg feature clusters
    coverage: float = 1.0         # fraction of images owning a >=0.5-IoU proposal
    objectness_noise: float = 0.1
    gt_frac_range: tuple[float, float] = (0.22, 0.45)

    def __post_init__(self):
        if self.n_images < 1 or self.proposals_per_image < 1 or self.feature_dim < 1:
            raise ValueError("counts must be positive")
        if self.width < 8 or self.height < 8:
            raise ValueError("image size too small")
        if not self.classes:
            raise ValueError("need at least one class")
        if not 0.0 <= self.separation <= 1.0:
            raise ValueError(f"separation {self.separation} outside [0, 1]")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage {self.coverage} outside [0, 1]")
        if self.objectness_noise < 0.0:
            raise ValueError("objectness_noise must be >= 0")


def _clipped_normal(rng: np.random.Generator, size) -> np.ndarray:
    return np.clip(rng.standard_normal(size), -_NOISE_CLIP, _NOISE_CLIP)


def _class_mean(cfg: SyntheticConfig, class_index: int) -> np.ndarray:
    mu = np.zeros(cfg.feature_dim)
    mu[class_index % cfg.feature_dim] = _CLUSTER_SCALE * cfg.separation
    return mu


def _clamp_box(x1, y1, x2, y2, width, height, min_side=3.0) -> Box:
    x1 = min(max(x1, 0.0), width - min_side)
    y1 = min(max(y1, 0.0), height - min_side)
    x2 = min(max(x2, x1 + min_side), float(width))
    y2 = min(max(y2, y1 + min_side), float(height))
    return Box(x1, y1, x2, y2)


def _random_box(rng, cfg) -> Box:
    w = rng.uniform(0.08, 0.9) * cfg.width
    h = rng.uniform(0.08, 0.9) * cfg.height
    x1 = rng.uniform(0, cfg.width - w)
    y1 = rng.uniform(0, cfg.height - h)
    return _clamp_box(x1, y1, x1 + w, y1 + h, cfg.width, cfg.height)


def _jittered_box(rng, gt: Box, cfg, spread: float) -> Box:
    w = gt.x2 - gt.x1
    h = gt.y2 - gt.y1
    cx = (gt.x1 + gt.x2) / 2 + rng.normal(0, spread * w)
    cy = (gt.y1 + gt.y2) / 2 + rng.normal(0, spread * h)
    sw = w * rng.uniform(0.55, 1.55)
    sh = h * rng.uniform(0.55, 1.55)
    return _clamp_box(cx - sw / 2, cy - sh / 2, cx + sw / 2, cy + sh / 2,
                      cfg.width, cfg.height)


def _grid_boxes(cfg) -> list[Box]:
    out = []
    base = min(cfg.width, cfg.height)
    for frac in (0.22, 0.38, 0.58, 0.8):
        side = frac * base
        step = max(side / 1.6, 4.0)
        x = 0.0
        while x + side <= cfg.width + 1e-9:
            y = 0.0
            while y + side <= cfg.height + 1e-9:
                out.append(_clamp_box(x, y, x + side, y + side, cfg.width, cfg.height))
                y += step
            x += step
    return out


def _max_iou(box: Box, gts: list[Box]) -> float:
    return max(iou(box, g) for g in gts) if gts else 0.0


def generate_synthetic(config: SyntheticConfig, seed: int) -> Dataset:
    """Build a dataset deterministically from (config, seed)."""
    cfg = config
    rng = np.random.default_rng(seed)

    n_covered = int(round(cfg.coverage * cfg.n_images))
    covered = np.zeros(cfg.n_images, dtype=bool)
    covered[rng.permutation(cfg.n_images)[:n_covered]] = True

    grid_pool = _grid_boxes(cfg)
    images = []
    for i in range(cfg.n_images):
        image_id = f"synth-{i:04d}"
        cls = cfg.classes[i % len(cfg.classes)]
        cls_index = cfg.classes.index(cls)

        lo, hi = cfg.gt_frac_range
        gw = rng.uniform(lo, hi) * cfg.width
        gh = rng.uniform(lo, hi) * cfg.height
        gx = rng.uniform(0, cfg.width - gw)
        gy = rng.uniform(0, cfg.height - gh)
        gt = _clamp_box(gx, gy, gx + gw, gy + gh, cfg.width, cfg.height)
        gts = [gt]

        def admissible(b: Box, is_covered=covered[i], gts=gts) -> bool:
            # uncovered images must not own any qualifying proposal
            return is_covered or _max_iou(b, gts) < 0.5

        proposals: list[Box] = []
        if covered[i]:
            proposals.append(gt)  # the best possible proposal always exists

        n_jit = max(6, int(0.15 * cfg.proposals_per_image))
        attempts = 0
        while len(proposals) < min(n_jit, cfg.proposals_per_image) and attempts < 50 * n_jit:
            attempts += 1
            spread = rng.uniform(0.05, 0.6)
            b = _jittered_box(rng, gt, cfg, spread)
            if admissible(b):
                proposals.append(b)
            # inadmissible draws are simply rejected; spread re-randomizes

        grid_order = rng.permutation(len(grid_pool))
        for gi in grid_order:
            if len(proposals) >= int(0.85 * cfg.proposals_per_image):
                break
            b = grid_pool[gi]
            if admissible(b):
                proposals.append(b)

        attempts = 0
        while len(proposals) < cfg.proposals_per_image and attempts < 200 * cfg.proposals_per_image:
            attempts += 1
            b = _random_box(rng, cfg)
            if admissible(b):
                proposals.append(b)
        if len(proposals) < cfg.proposals_per_image:
            raise RuntimeError("proposal sampling failed to fill the budget")
        proposals = proposals[: cfg.proposals_per_image]

        order = rng.permutation(len(proposals))
        proposals = [proposals[j] for j in order]

        n = len(proposals)
        boxes = np.array([p.as_tuple() for p in proposals], dtype=np.float64)
        feats = np.empty((n, cfg.feature_dim), dtype=np.float64)
        obj = np.empty(n, dtype=np.float64)
        mu_fg = _class_mean(cfg, cls_index)
        for j, p in enumerate(proposals):
            best = _max_iou(p, gts)
            noise = _clipped_normal(rng, cfg.feature_dim)
            feats[j] = (mu_fg if best >= 0.5 else 0.0) + noise
            u = rng.uniform(-0.5, 0.5)
            obj[j] = float(np.clip(0.12 + 0.78 * best + cfg.objectness_noise * u,
                                   1e-3, 1.0))

        images.append(
            ImageRecord(
                image_id=image_id,
                width=cfg.width,
                height=cfg.height,
                labels=(cls,),
                boxes=boxes,
                features=feats,
                objectness=obj,
                ground_truth={cls: gts},
            )
        )

    return Dataset(classes=list(cfg.classes), feature_dim=cfg.feature_dim, images=images)


def separable_benchmark(seed: int = 0, n_images: int = 200) -> Dataset:
    """Fully separable features, every image coverable: the easy regime."""
    cfg = SyntheticConfig(n_images=n_images, separation=1.0, coverage=1.0)
    return generate_synthetic(cfg, seed)


def noisy_benchmark(seed: int = 0, n_images: int = 200) -> Dataset:
    """Overlapping feature clusters and noisy objectness: detector mistakes
    and a spread of detection IoUs, used for noise calibration and the
    strategy trade-off studies."""
    cfg = SyntheticConfig(
        n_images=n_images,
        separation=0.45,
        coverage=1.0,
        objectness_noise=0.55,
    )
    return generate_synthetic(cfg, seed)
