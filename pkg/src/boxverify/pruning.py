"""Search-space reduction from verification outcomes.

Each rule filters an image's surviving proposal set against the verified
detection ``d``:

* ``neg``       -- drop exactly the rejected proposal.
* ``extneg``    -- drop every proposal with IoU >= 0.5 with the rejected
                   one (they share its fate: a correct box cannot overlap
                   an incorrect one that much).
* ``part``      -- the detection shows only a piece of the object, so the
                   object's box must (nearly) contain it: keep proposals
                   p with IoA(d, p) > 0.9.
* ``container`` -- the detection encloses the object: keep proposals
                   (nearly) inside it, IoA(p, d) > 0.9.
* ``mixed``     -- the detection straddles the object's boundary: keep
                   only genuine partial overlaps, i.e. drop proposals
                   inside d, containing d, disjoint from d, or with
                   IoU >= 0.5 with d.
* ``missed``    -- the object is elsewhere entirely: keep only proposals
                   with zero IoU.

The containment tests share the fixed 0.9 tolerance.  Boundary semantics
are literal: "IoA <= 0.9 eliminated" keeps strictly greater, "IoU >= 0.5
eliminated" removes the boundary.  Spaces only ever shrink.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .annotator import AnswerValue, QuestionKind, VerificationEvent
from .geometry import Box, area, intersection_areas

__all__ = [
    "IOA_TOLERANCE",
    "EXTNEG_IOU",
    "Strategy",
    "StrategyError",
    "SearchSpace",
    "prune_neg",
    "prune_extneg",
    "prune_part",
    "prune_container",
    "prune_mixed",
    "prune_missed",
    "apply",
    "required_kind",
]

IOA_TOLERANCE = 0.9
EXTNEG_IOU = 0.5


class Strategy(str, Enum):
    RETRAIN_ONLY = "I"
    PRUNE_NEG = "II"
    PRUNE_EXTNEG = "III"
    PRUNE_YPCMM = "IV"


class StrategyError(ValueError):
    """Answer kind incompatible with the active strategy."""


def required_kind(strategy: Strategy) -> QuestionKind:
    return QuestionKind.YPCMM if strategy == Strategy.PRUNE_YPCMM else QuestionKind.YES_NO


@dataclass(frozen=True)
class SearchSpace:
    """Surviving proposal indices of one image.

    ``boxes`` is the image's full (n, 4) proposal array, shared and never
    copied; ``alive`` indexes into it, sorted ascending.
    """
    image_id: str
    boxes: np.ndarray
    alive: tuple[int, ...]

    @classmethod
    def full(cls, image_id: str, boxes: np.ndarray) -> "SearchSpace":
        return cls(image_id=image_id, boxes=boxes, alive=tuple(range(len(boxes))))

    @property
    def alive_boxes(self) -> np.ndarray:
        return self.boxes[list(self.alive)]

    def _keep(self, mask: np.ndarray) -> "SearchSpace":
        kept = tuple(i for i, keep in zip(self.alive, mask) if keep)
        return replace(self, alive=kept)


def _geom(space: SearchSpace, d: Box):
    boxes = space.alive_boxes
    inter = intersection_areas(boxes, d)
    p_area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    d_area = area(d)
    iou = inter / (p_area + d_area - inter)
    ioa_p_in_d = inter / p_area      # IoA(p, d)
    ioa_d_in_p = inter / d_area      # IoA(d, p)
    return iou, ioa_p_in_d, ioa_d_in_p


def prune_neg(space: SearchSpace, d: Box) -> SearchSpace:
    """Remove the single rejected proposal (matched by exact geometry)."""
    target = np.asarray(d.as_tuple())
    for pos, idx in enumerate(space.alive):
        if np.array_equal(space.boxes[idx], target):
            kept = space.alive[:pos] + space.alive[pos + 1:]
            return replace(space, alive=kept)
    raise ValueError(f"detection {d.as_tuple()} is not an alive proposal of {space.image_id!r}")


def prune_extneg(space: SearchSpace, d: Box) -> SearchSpace:
    iou, _, _ = _geom(space, d)
    return space._keep(iou < EXTNEG_IOU)


def prune_part(space: SearchSpace, d: Box) -> SearchSpace:
    _, _, ioa_d_in_p = _geom(space, d)
    return space._keep(ioa_d_in_p > IOA_TOLERANCE)


def prune_container(space: SearchSpace, d: Box) -> SearchSpace:
    _, ioa_p_in_d, _ = _geom(space, d)
    return space._keep(ioa_p_in_d > IOA_TOLERANCE)


def prune_mixed(space: SearchSpace, d: Box) -> SearchSpace:
    iou, ioa_p_in_d, ioa_d_in_p = _geom(space, d)
    remove = (
        (ioa_p_in_d > IOA_TOLERANCE)
        | (ioa_d_in_p > IOA_TOLERANCE)
        | (iou == 0.0)
        | (iou >= EXTNEG_IOU)
    )
    return space._keep(~remove)


def prune_missed(space: SearchSpace, d: Box) -> SearchSpace:
    iou, _, _ = _geom(space, d)
    return space._keep(iou == 0.0)


_YPCMM_RULES = {
    AnswerValue.PART: prune_part,
    AnswerValue.CONTAINER: prune_container,
    AnswerValue.MIXED: prune_mixed,
    AnswerValue.MISSED: prune_missed,
}


def apply(strategy: Strategy, space: SearchSpace, event: VerificationEvent) -> SearchSpace:
    """Dispatch the event's answer to the strategy's pruning rule.

    Yes answers leave the space untouched (the image is fixed by the
    caller and never pruned again).  Strategy I never prunes.
    """
    answer = event.answer
    d = event.question.detection
    if event.question.image_id != space.image_id:
        raise ValueError("event refers to a different image")
    if answer == AnswerValue.YES:
        return space
    if strategy == Strategy.RETRAIN_ONLY:
        return space
    if strategy in (Strategy.PRUNE_NEG, Strategy.PRUNE_EXTNEG):
        if answer != AnswerValue.NO:
            raise StrategyError(
                f"strategy {strategy.value} expects yes/no answers, got {answer.value!r}"
            )
        return prune_neg(space, d) if strategy == Strategy.PRUNE_NEG else prune_extneg(space, d)
    # Strategy IV
    rule = _YPCMM_RULES.get(answer)
    if rule is None:
        raise StrategyError(
            f"strategy IV expects five-way answers, got {answer.value!r}"
        )
    return rule(space, d)
