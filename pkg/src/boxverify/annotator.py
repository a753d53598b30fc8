"""Verification answers: perfect oracles, noisy simulated annotators, and
the annotation-time cost model.

The yes/no criterion is the standard localization test: a detection is
correct when its best IoU against the class' ground-truth instances
reaches 0.5.  The five-way vocabulary additionally diagnoses failures as
Part / Container / Mixed / Missed from the containment relations between
the detection and the best-matching instance.

Noisy annotators answer Yes with probability sigmoid((IoU* - 0.5) / tau);
tau = 0 collapses to the perfect oracle.  All randomness is derived by
hashing the question identity with the annotator seed, so answers are a
pure function of (profile, seed, question) -- re-asking the same box
yields the same answer, and crash-recovery replay cannot drift.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dataset import Dataset, ground_truth_boxes
from .geometry import Box, ioa, iou

__all__ = [
    "QuestionKind",
    "AnswerValue",
    "VerificationQuestion",
    "VerificationEvent",
    "AnnotatorProfile",
    "legal_values",
    "best_match",
    "oracle_yes_no",
    "oracle_ypcmm",
    "noisy_answer",
    "response_cost",
    "expected_error_rates",
    "simulate_error_rates",
    "calibrate_temperature",
    "fit_far_time",
    "detection_iou_pool",
    "SimulatedAnnotator",
]


class QuestionKind(str, Enum):
    YES_NO = "yesno"
    YPCMM = "ypcmm"


class AnswerValue(str, Enum):
    YES = "yes"
    NO = "no"
    PART = "part"
    CONTAINER = "container"
    MIXED = "mixed"
    MISSED = "missed"


_YESNO = (AnswerValue.YES, AnswerValue.NO)
_YPCMM = (AnswerValue.YES, AnswerValue.PART, AnswerValue.CONTAINER,
          AnswerValue.MIXED, AnswerValue.MISSED)


def legal_values(kind: QuestionKind) -> tuple[AnswerValue, ...]:
    return _YESNO if kind == QuestionKind.YES_NO else _YPCMM


@dataclass(frozen=True)
class VerificationQuestion:
    image_id: str
    class_name: str
    detection: Box
    kind: QuestionKind
    iteration: int


@dataclass(frozen=True)
class VerificationEvent:
    """One question/answer pair.

    ``seq`` and ``proposal_index`` frame the event for the append-only
    log; ``timestamp`` is the cumulative simulated clock for simulated
    sources and wall-clock epoch seconds for human ones.
    """
    seq: int
    question: VerificationQuestion
    proposal_index: int
    answer: AnswerValue
    elapsed_seconds: float
    source: str                 # "simulated" | "human"
    annotator_id: str
    timestamp: float

    def __post_init__(self):
        if self.answer not in legal_values(self.question.kind):
            raise ValueError(
                f"answer {self.answer.value!r} illegal for kind {self.question.kind.value!r}"
            )
        if self.source == "human" and not self.elapsed_seconds > 0:
            raise ValueError("human events must have positive elapsed_seconds")


@dataclass(frozen=True)
class AnnotatorProfile:
    noise_temperature: float = 0.0     # tau; 0 = perfect oracle
    containment_tolerance: float = 0.95
    t_far: float = 1.4                 # seconds, response time far from the boundary
    t_peak: float = 2.2                # seconds, response time at IoU ~ 0.5
    sigma_t: float = 0.1
    yesno_cost: float = 1.6            # seconds per flat-mode yes/no answer
    ypcmm_cost: float = 2.4
    cost_mode: str = "flat"            # "flat" | "curve"

    def __post_init__(self):
        if self.noise_temperature < 0:
            raise ValueError("noise_temperature must be >= 0")
        if not 0.0 < self.containment_tolerance <= 1.0:
            raise ValueError("containment_tolerance must be in (0, 1]")
        if not self.t_peak >= self.t_far > 0:
            raise ValueError("need t_peak >= t_far > 0")
        if self.cost_mode not in ("flat", "curve"):
            raise ValueError(f"unknown cost_mode {self.cost_mode!r}")


def best_match(gt_boxes: list[Box], d: Box) -> tuple[int, float]:
    """Index and IoU of the ground-truth instance best matching ``d``."""
    if not gt_boxes:
        raise ValueError("oracle requires at least one ground-truth box")
    ious = [iou(g, d) for g in gt_boxes]
    idx = int(np.argmax(ious))
    return idx, ious[idx]


def oracle_yes_no(gt_boxes: list[Box], d: Box) -> AnswerValue:
    _, iou_star = best_match(gt_boxes, d)
    return AnswerValue.YES if iou_star >= 0.5 else AnswerValue.NO


def oracle_ypcmm(gt_boxes: list[Box], d: Box,
                 containment_tolerance: float = 0.95) -> AnswerValue:
    """Five-way verdict against the best-matching instance.

    Yes shares the yes/no criterion.  Failures: Missed when the detection
    overlaps no instance at all; Part when the detection lies (almost)
    inside the object; Container when it (almost) contains the object;
    Mixed otherwise.  Exact containment never holds for arbitrary real
    boxes, hence the tolerance (default 0.95).
    """
    idx, iou_star = best_match(gt_boxes, d)
    if iou_star >= 0.5:
        return AnswerValue.YES
    if all(iou(g, d) == 0.0 for g in gt_boxes):
        return AnswerValue.MISSED
    g = gt_boxes[idx]
    if ioa(d, g) >= containment_tolerance:
        return AnswerValue.PART
    if ioa(g, d) >= containment_tolerance:
        return AnswerValue.CONTAINER
    return AnswerValue.MIXED


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def noisy_answer(profile: AnnotatorProfile, gt_boxes: list[Box],
                 question: VerificationQuestion,
                 u: float, u_category: float = 0.0) -> AnswerValue:
    """Answer with logistic boundary noise of temperature tau.

    ``u`` and ``u_category`` are uniform draws in [0, 1) supplied by the
    caller (see :class:`SimulatedAnnotator` for the stateless derivation).
    Yes/no mode answers Yes with probability sigmoid((IoU* - 0.5) / tau).
    Five-way mode flips the oracle verdict to a uniformly chosen other
    category with the probability the yes/no judgement would have flipped,
    sigmoid(-|IoU* - 0.5| / tau).
    """
    tau = profile.noise_temperature
    _, iou_star = best_match(gt_boxes, question.detection)
    if question.kind == QuestionKind.YES_NO:
        if tau == 0.0:
            return AnswerValue.YES if iou_star >= 0.5 else AnswerValue.NO
        p_yes = _sigmoid((iou_star - 0.5) / tau)
        return AnswerValue.YES if u < p_yes else AnswerValue.NO
    truth = oracle_ypcmm(gt_boxes, question.detection, profile.containment_tolerance)
    if tau == 0.0:
        return truth
    p_flip = _sigmoid(-abs(iou_star - 0.5) / tau)
    if u >= p_flip:
        return truth
    others = [v for v in _YPCMM if v != truth]
    return others[min(int(u_category * len(others)), len(others) - 1)]


def response_cost(profile: AnnotatorProfile, question: VerificationQuestion,
                  iou_star: float) -> float:
    """Seconds charged for a simulated answer.

    Flat mode bills the task-average cost per answer kind; curve mode
    peaks near the decision boundary where humans are slowest:
    t = t_far + (t_peak - t_far) * exp(-(IoU* - 0.5)^2 / (2 sigma_t^2)).
    """
    if not 0.0 <= iou_star <= 1.0:
        raise ValueError(f"iou_star {iou_star} outside [0, 1]")
    if profile.cost_mode == "flat":
        return profile.yesno_cost if question.kind == QuestionKind.YES_NO else profile.ypcmm_cost
    bump = math.exp(-((iou_star - 0.5) ** 2) / (2.0 * profile.sigma_t ** 2))
    return profile.t_far + (profile.t_peak - profile.t_far) * bump


# --- temperature calibration --------------------------------------------------

def expected_error_rates(pool_ious: np.ndarray, tau: float) -> tuple[float, float]:
    """Expected (incorrect-yes, incorrect-no) rates on a detection pool.

    incorrect-yes: probability a detection that should be rejected
    (IoU < 0.5) is accepted, averaged over the pool's bad detections;
    incorrect-no is the mirror for good detections.
    """
    pool = np.asarray(pool_ious, dtype=np.float64)
    bad = pool[pool < 0.5]
    good = pool[pool >= 0.5]
    if len(bad) == 0 or len(good) == 0:
        raise ValueError("pool must contain detections on both sides of 0.5")
    if tau == 0.0:
        return 0.0, 0.0
    p_yes_bad = 1.0 / (1.0 + np.exp(-(bad - 0.5) / tau))
    p_no_good = 1.0 / (1.0 + np.exp((good - 0.5) / tau))
    return float(p_yes_bad.mean()), float(p_no_good.mean())


def simulate_error_rates(pool_ious: np.ndarray, tau: float, n: int,
                         seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo version of :func:`expected_error_rates` over n draws."""
    rng = np.random.default_rng(seed)
    pool = np.asarray(pool_ious, dtype=np.float64)
    picks = pool[rng.integers(0, len(pool), size=n)]
    p_yes = 1.0 / (1.0 + np.exp(-(picks - 0.5) / tau)) if tau > 0 else (picks >= 0.5).astype(float)
    said_yes = rng.uniform(size=n) < p_yes
    bad = picks < 0.5
    good = ~bad
    if bad.sum() == 0 or good.sum() == 0:
        raise ValueError("pool sample lacks one side of the boundary")
    incorrect_yes = float((said_yes & bad).sum() / bad.sum())
    incorrect_no = float((~said_yes & good).sum() / good.sum())
    return incorrect_yes, incorrect_no


def calibrate_temperature(pool_ious: np.ndarray,
                          target_incorrect_yes: float = 0.148,
                          target_incorrect_no: float = 0.085,
                          tau_bounds: tuple[float, float] = (1e-4, 2.0),
                          iterations: int = 80) -> float:
    """Bisection for the temperature that reproduces measured error rates.

    Both expected rates rise monotonically with tau, so we bisect on
    their sum hitting target_incorrect_yes + target_incorrect_no.  How
    the total splits between the two sides is a property of the pool's
    IoU distribution, not of tau.
    """
    target = target_incorrect_yes + target_incorrect_no
    lo, hi = tau_bounds

    def total(t: float) -> float:
        iy, ino = expected_error_rates(pool_ious, t)
        return iy + ino

    if total(hi) < target:
        return hi
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if total(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fit_far_time(pool_ious: np.ndarray, target_mean: float = 1.6,
                 t_peak: float = 2.2, sigma_t: float = 0.1) -> float:
    """Baseline response time making the pool-averaged curve cost hit
    target_mean; closed form since the mean is linear in t_far."""
    pool = np.asarray(pool_ious, dtype=np.float64)
    g = float(np.exp(-((pool - 0.5) ** 2) / (2.0 * sigma_t ** 2)).mean())
    if g >= 1.0:
        raise ValueError("pool concentrated exactly at the boundary")
    t_far = (target_mean - t_peak * g) / (1.0 - g)
    if not 0 < t_far <= t_peak:
        raise ValueError(f"fitted t_far {t_far:.3f} violates 0 < t_far <= t_peak")
    return t_far


def detection_iou_pool(dataset: Dataset, class_name: str,
                       detections: dict) -> np.ndarray:
    """Best ground-truth IoU of each detection: the calibration pool."""
    out = []
    for image_id in sorted(detections):
        det = detections[image_id]
        gts = ground_truth_boxes(dataset, image_id, class_name)
        out.append(best_match(gts, det.box)[1])
    return np.asarray(out, dtype=np.float64)


# --- answer source ------------------------------------------------------------

def _hash_unit(*parts) -> float:
    """Uniform in [0, 1) derived from a stable hash of the parts."""
    key = "|".join(f"{p:.17g}" if isinstance(p, float) else str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


class SimulatedAnnotator:
    """Answer source backed by ground truth, optionally noisy.

    Stateless per question: the uniform draws come from hashing
    (seed, image, box, kind), so answer streams are reproducible and
    independent of the order questions arrive in.
    """

    source = "simulated"

    def __init__(self, dataset: Dataset, profile: AnnotatorProfile | None = None,
                 seed: int = 0, annotator_id: str = "sim"):
        self.dataset = dataset
        self.profile = profile or AnnotatorProfile()
        self.seed = seed
        self.annotator_id = annotator_id

    def answer(self, question: VerificationQuestion) -> tuple[AnswerValue, float]:
        gts = ground_truth_boxes(self.dataset, question.image_id, question.class_name)
        _, iou_star = best_match(gts, question.detection)
        d = question.detection
        u = _hash_unit(self.seed, question.image_id, question.kind.value,
                       d.x1, d.y1, d.x2, d.y2)
        u_cat = _hash_unit(self.seed, "cat", question.image_id, question.kind.value,
                           d.x1, d.y1, d.x2, d.y2)
        if self.profile.noise_temperature == 0.0:
            if question.kind == QuestionKind.YES_NO:
                value = oracle_yes_no(gts, d)
            else:
                value = oracle_ypcmm(gts, d, self.profile.containment_tolerance)
        else:
            value = noisy_answer(self.profile, gts, question, u, u_cat)
        return value, response_cost(self.profile, question, iou_star)
