"""The verification-driven training loop.

Per class, iterate three phases until done:

1. verify: every still-open image's current detection is shown to the
   answer source once; a Yes fixes the image (it leaves the loop for
   good), anything else shrinks the image's search space according to
   the active strategy.  Repeat proposals hit the answer cache: they
   cost nothing and emit no event.
2. retrain: fit the scorer on the features of all positively verified
   detections so far, against background sampled around them.
3. relocalize: rescore each open image's surviving proposals (objectness
   off) and adopt the argmax as its new detection, ties to the lowest
   proposal index.

Termination: no images left open, a verify phase that produced no new
events (nothing can change anymore), or the iteration cap.

State mutation is factored so that live answering and crash-recovery
replay share one code path (:func:`apply_answer`); a run is a pure
function of (dataset, initial detections, strategy, answer source, seed).
This module never reads ground truth -- simulated answers and CorLoc
curves reach it only through injected callables.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .annotator import (
    AnswerValue,
    QuestionKind,
    VerificationEvent,
    VerificationQuestion,
)
from .dataset import Dataset
from .detector import Detection, ScorerModel, TrainConfig, sample_background, train_detector
from .pruning import SearchSpace, Strategy, StrategyError, apply as apply_prune, required_kind

__all__ = [
    "AnswerSource",
    "LoopConfig",
    "CurvePoint",
    "PendingQuestion",
    "RunState",
    "init_state",
    "pending_questions",
    "build_event",
    "apply_answer",
    "verify_round",
    "retrain_round",
    "relocalize_round",
    "run",
]


class AnswerSource(Protocol):
    source: str
    annotator_id: str

    def answer(self, question: VerificationQuestion) -> tuple[AnswerValue, float]:
        """Return (answer value, elapsed seconds)."""
        ...


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    verifications: int
    seconds: float
    corloc: float          # nan when no evaluator was injected
    fixed_fraction: float


@dataclass(frozen=True)
class PendingQuestion:
    image_id: str
    proposal_index: int
    question: VerificationQuestion


@dataclass
class RunState:
    class_name: str
    strategy: Strategy
    question_kind: QuestionKind
    seed: int
    n_images: int
    iteration: int = 0
    active: list[str] = field(default_factory=list)        # sorted image ids
    exhausted: list[str] = field(default_factory=list)     # emptied search spaces
    spaces: dict[str, SearchSpace] = field(default_factory=dict)
    fixed: dict[str, Detection] = field(default_factory=dict)
    current: dict[str, Detection] = field(default_factory=dict)
    cache: dict[tuple[str, int, str], AnswerValue] = field(default_factory=dict)
    events_applied: int = 0
    verifications: int = 0
    seconds: float = 0.0
    last_event_iteration: int = -1
    model: ScorerModel | None = None
    status: str = "running"

    @property
    def fixed_fraction(self) -> float:
        return len(self.fixed) / self.n_images


def init_state(dataset: Dataset, class_name: str, strategy: Strategy,
               d0: dict[str, Detection], question_kind: QuestionKind | None = None,
               seed: int = 0) -> RunState:
    """Open every labeled image with its full proposal set and the
    initial detections."""
    kind = question_kind or required_kind(strategy)
    if strategy in (Strategy.PRUNE_NEG, Strategy.PRUNE_EXTNEG) and kind != QuestionKind.YES_NO:
        raise StrategyError(f"strategy {strategy.value} requires yes/no questions")
    if strategy == Strategy.PRUNE_YPCMM and kind != QuestionKind.YPCMM:
        raise StrategyError("strategy IV requires five-way questions")

    images = dataset.labeled_images(class_name)
    if not images:
        raise ValueError(f"no images labeled {class_name!r}")
    missing = [im.image_id for im in images if im.image_id not in d0]
    if missing:
        raise ValueError(f"initial detections missing images: {missing[:5]}")
    state = RunState(
        class_name=class_name,
        strategy=strategy,
        question_kind=kind,
        seed=seed,
        n_images=len(images),
        active=sorted(im.image_id for im in images),
    )
    for im in images:
        state.spaces[im.image_id] = SearchSpace.full(im.image_id, im.boxes)
        det = d0[im.image_id]
        if det.proposal_index is None:
            raise ValueError(f"initial detection for {im.image_id!r} lacks a proposal index")
        state.current[im.image_id] = det
    return state


def pending_questions(state: RunState, dataset: Dataset) -> list[PendingQuestion]:
    """Uncached questions of the current round, in ascending image id."""
    out = []
    for image_id in state.active:
        det = state.current[image_id]
        key = (image_id, det.proposal_index, state.question_kind.value)
        if key in state.cache:
            continue
        out.append(PendingQuestion(
            image_id=image_id,
            proposal_index=det.proposal_index,
            question=VerificationQuestion(
                image_id=image_id,
                class_name=state.class_name,
                detection=det.box,
                kind=state.question_kind,
                iteration=state.iteration,
            ),
        ))
    return out


def build_event(state: RunState, pending: PendingQuestion, answer: AnswerValue,
                elapsed_seconds: float, source: str, annotator_id: str) -> VerificationEvent:
    """Frame an answer as the next event of the run's log.

    Simulated timestamps advance a logical clock (cumulative seconds) so
    reruns are byte-identical; human timestamps are wall clock.
    """
    ts = state.seconds + elapsed_seconds if source == "simulated" else time.time()
    return VerificationEvent(
        seq=state.events_applied + 1,
        question=pending.question,
        proposal_index=pending.proposal_index,
        answer=answer,
        elapsed_seconds=elapsed_seconds,
        source=source,
        annotator_id=annotator_id,
        timestamp=ts,
    )


def apply_answer(state: RunState, event: VerificationEvent) -> None:
    """Fold one verification event into the state.

    Shared by live answering and log replay; the event must be the next
    one in sequence.
    """
    if event.seq != state.events_applied + 1:
        raise ValueError(f"event out of order: seq {event.seq}, applied {state.events_applied}")
    q = event.question
    image_id = q.image_id
    if image_id not in state.current:
        raise ValueError(f"event for image {image_id!r} which is not open")
    key = (image_id, event.proposal_index, q.kind.value)
    if key in state.cache:
        raise ValueError(f"duplicate verification of {key}")
    state.cache[key] = event.answer
    state.events_applied += 1
    state.verifications += 1
    state.seconds += event.elapsed_seconds
    state.last_event_iteration = q.iteration

    if event.answer == AnswerValue.YES:
        state.fixed[image_id] = Detection(
            image_id=image_id,
            class_name=q.class_name,
            box=q.detection,
            score=0.0,
            proposal_index=event.proposal_index,
        )
        state.active.remove(image_id)
        del state.current[image_id]
        return

    space = apply_prune(state.strategy, state.spaces[image_id], event)
    state.spaces[image_id] = space
    if not space.alive:
        # contradictory answers emptied the space; terminal localization failure
        state.active.remove(image_id)
        state.exhausted.append(image_id)
        del state.current[image_id]


def verify_round(state: RunState, dataset: Dataset, source: AnswerSource,
                 on_event: Callable[[VerificationEvent], None] | None = None) -> int:
    """Ask one question per open image (cache hits are free); returns the
    number of new events."""
    pending = pending_questions(state, dataset)
    for pq in pending:
        value, cost = source.answer(pq.question)
        event = build_event(state, pq, value, cost, source.source, source.annotator_id)
        if on_event is not None:
            on_event(event)  # durable before applied: an acked answer is never lost
        apply_answer(state, event)
    return len(pending)


def retrain_round(state: RunState, dataset: Dataset, config: LoopConfig) -> ScorerModel | None:
    """Retrain on all fixed positives; with none yet, keep the previous model."""
    if not state.fixed:
        warnings.warn(f"{state.class_name}: no verified positives yet, reusing previous model")
        return state.model
    positives = [state.fixed[iid] for iid in sorted(state.fixed)]
    pos_feats = np.asarray([
        dataset.image(d.image_id).features[d.proposal_index] for d in positives
    ])
    background = sample_background(dataset, positives, config.train,
                                   seed=state.seed + 7919 * state.iteration)
    if not background:
        raise RuntimeError(
            f"{state.class_name}: no eligible background around the verified positives"
        )
    bg_feats = np.asarray([p.features for p in background])
    model = train_detector(pos_feats, bg_feats, config.train, seed=state.seed,
                           class_name=state.class_name, iteration=state.iteration)
    state.model = model
    return model


def relocalize_round(state: RunState, model: ScorerModel | None, dataset: Dataset) -> None:
    """Move each open image's detection to its best surviving proposal.

    Without any trained model (possible before the first Yes) detections
    stay put where still alive and fall to the lowest surviving index
    where pruned away.
    """
    for image_id in list(state.active):
        space = state.spaces[image_id]
        alive = list(space.alive)
        image = dataset.image(image_id)
        if model is None:
            det = state.current[image_id]
            if det.proposal_index in space.alive:
                continue
            idx = alive[0]
            score = 0.0
        else:
            scores = model.score(image.features[alive])
            best = int(np.argmax(scores))  # first maximum: lowest alive index
            idx = alive[best]
            score = float(scores[best])
        state.current[image_id] = Detection(
            image_id=image_id,
            class_name=state.class_name,
            box=image.proposal_box(idx),
            score=score,
            proposal_index=idx,
        )


def run(dataset: Dataset, class_name: str, strategy: Strategy, source: AnswerSource,
        d0: dict[str, Detection], config: LoopConfig | None = None,
        question_kind: QuestionKind | None = None, seed: int = 0,
        corloc_fn: Callable[[RunState], float] | None = None,
        on_event: Callable[[VerificationEvent], None] | None = None,
        on_round: Callable[[RunState], None] | None = None,
        ) -> tuple[RunState, list[CurvePoint]]:
    """Run the full loop to termination; returns the final state and the
    per-round trade-off curve."""
    config = config or LoopConfig()
    state = init_state(dataset, class_name, strategy, d0, question_kind, seed)
    curve: list[CurvePoint] = []

    def record():
        curve.append(CurvePoint(
            iteration=state.iteration,
            verifications=state.verifications,
            seconds=state.seconds,
            corloc=corloc_fn(state) if corloc_fn is not None else float("nan"),
            fixed_fraction=state.fixed_fraction,
        ))

    record()
    if on_round is not None:
        on_round(state)
    return resume(state, dataset, source, config, curve,
                  corloc_fn=corloc_fn, on_event=on_event, on_round=on_round)


def resume(state: RunState, dataset: Dataset, source: AnswerSource,
           config: LoopConfig | None = None, curve: list[CurvePoint] | None = None,
           corloc_fn: Callable[[RunState], float] | None = None,
           on_event: Callable[[VerificationEvent], None] | None = None,
           on_round: Callable[[RunState], None] | None = None,
           ) -> tuple[RunState, list[CurvePoint]]:
    """Continue a (possibly recovered) run until termination.

    A round whose questions were all answered before a crash is not a
    stall: the replayed events carry the round number, so the round is
    finished (retrain + relocalize) instead of terminating.
    """
    config = config or LoopConfig()
    curve = curve if curve is not None else []
    if state.status != "running":
        return state, curve

    def record():
        curve.append(CurvePoint(
            iteration=state.iteration,
            verifications=state.verifications,
            seconds=state.seconds,
            corloc=corloc_fn(state) if corloc_fn is not None else float("nan"),
            fixed_fraction=state.fixed_fraction,
        ))

    while state.active and state.iteration < config.max_iterations:
        state.iteration += 1
        pending = pending_questions(state, dataset)
        if not pending and state.last_event_iteration != state.iteration:
            state.status = "stalled"
            if on_round is not None:
                on_round(state)
            break
        for pq in pending:
            value, cost = source.answer(pq.question)
            event = build_event(state, pq, value, cost, source.source, source.annotator_id)
            if on_event is not None:
                on_event(event)  # durable before applied: an acked answer is never lost
            apply_answer(state, event)
        if not state.active:
            state.status = "all_resolved"
            record()
            if on_round is not None:
                on_round(state)
            break
        model = retrain_round(state, dataset, config)
        relocalize_round(state, model, dataset)
        record()
        if on_round is not None:
            on_round(state)
    else:
        state.status = "all_resolved" if not state.active else "max_iterations"
        if on_round is not None:
            on_round(state)
    return state, curve
