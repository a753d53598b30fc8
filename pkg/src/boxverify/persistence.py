"""Event-sourced run persistence.

A run is durable as a JSON checkpoint (the full state, written atomically
at round boundaries) plus an append-only JSON-lines event log (one
verification event per line, fsynced before the answer is acknowledged).
Recovery loads the newest checkpoint and replays the log's suffix through
the same state-transition code the live run uses, so a recovered run is
bit-identical to an uninterrupted one.

Serialization is canonical (sorted keys, no whitespace) to make
"byte-for-byte" a meaningful equality.
"""

from __future__ import annotations

import json
import os
import warnings
from pathlib import Path

import numpy as np

from .annotator import AnswerValue, QuestionKind, VerificationEvent, VerificationQuestion
from .dataset import Dataset
from .detector import Detection, ScorerModel
from .geometry import Box
from .loop import RunState, apply_answer
from .pruning import SearchSpace, Strategy

__all__ = [
    "canonical_json",
    "event_to_dict",
    "event_from_dict",
    "EventLog",
    "read_event_log",
    "state_to_dict",
    "state_from_dict",
    "write_checkpoint",
    "read_checkpoint",
    "recover",
]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def event_to_dict(event: VerificationEvent, run_id: str) -> dict:
    q = event.question
    return {
        "run_id": run_id,
        "seq": event.seq,
        "image_id": q.image_id,
        "class_name": q.class_name,
        "detection": list(q.detection.as_tuple()),
        "kind": q.kind.value,
        "iteration": q.iteration,
        "proposal_index": event.proposal_index,
        "answer": event.answer.value,
        "elapsed_seconds": event.elapsed_seconds,
        "source": event.source,
        "annotator_id": event.annotator_id,
        "timestamp": event.timestamp,
    }


def event_from_dict(raw: dict) -> VerificationEvent:
    question = VerificationQuestion(
        image_id=raw["image_id"],
        class_name=raw["class_name"],
        detection=Box.from_sequence(raw["detection"]),
        kind=QuestionKind(raw["kind"]),
        iteration=raw["iteration"],
    )
    return VerificationEvent(
        seq=raw["seq"],
        question=question,
        proposal_index=raw["proposal_index"],
        answer=AnswerValue(raw["answer"]),
        elapsed_seconds=raw["elapsed_seconds"],
        source=raw["source"],
        annotator_id=raw["annotator_id"],
        timestamp=raw["timestamp"],
    )


class EventLog:
    """Append-only JSON-lines log with fsync-before-acknowledge."""

    def __init__(self, path: str | Path, run_id: str):
        self.path = Path(path)
        self.run_id = run_id
        self._fh = None

    def append(self, event: VerificationEvent, fsync: bool = True) -> None:
        if self._fh is None:
            self._fh = open(self.path, "a", encoding="utf-8")
        self._fh.write(canonical_json(event_to_dict(event, self.run_id)) + "\n")
        self._fh.flush()
        if fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_event_log(path: str | Path) -> tuple[list[VerificationEvent], list[str], int, bool]:
    """Parse the log; tolerate a corrupt tail.

    Returns (events, run_ids, valid_byte_offset, truncated).  Parsing
    stops at the first malformed line; everything before it is kept.
    """
    path = Path(path)
    events: list[VerificationEvent] = []
    run_ids: list[str] = []
    offset = 0
    truncated = False
    if not path.exists():
        return events, run_ids, offset, truncated
    data = path.read_bytes()
    for line in data.split(b"\n"):
        if line == b"":
            offset += 1  # the newline itself
            continue
        try:
            raw = json.loads(line.decode("utf-8"))
            events.append(event_from_dict(raw))
            run_ids.append(raw["run_id"])
        except (ValueError, KeyError, UnicodeDecodeError):
            truncated = True
            break
        offset += len(line) + 1
    return events, run_ids, min(offset, len(data)), truncated


# --- state snapshots ----------------------------------------------------------

def _detection_to_dict(det: Detection) -> dict:
    return {
        "box": list(det.box.as_tuple()),
        "proposal_index": det.proposal_index,
        "score": det.score,
    }


def _detection_from_dict(raw: dict, image_id: str, class_name: str) -> Detection:
    return Detection(
        image_id=image_id,
        class_name=class_name,
        box=Box.from_sequence(raw["box"]),
        score=raw["score"],
        proposal_index=raw["proposal_index"],
    )


def _model_to_dict(model: ScorerModel | None) -> dict | None:
    if model is None:
        return None
    meta = {k: v for k, v in model.meta.items() if k != "loss_history"}
    return {
        "class": model.class_name,
        "feature_dim": model.feature_dim,
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
        "meta": meta,
    }


def _model_from_dict(raw: dict | None) -> ScorerModel | None:
    if raw is None:
        return None
    return ScorerModel(raw["class"], raw["feature_dim"],
                       np.asarray(raw["weights"], dtype=np.float64),
                       float(raw["bias"]), dict(raw["meta"]))


def state_to_dict(state: RunState, run_id: str) -> dict:
    return {
        "run_id": run_id,
        "class_name": state.class_name,
        "strategy": state.strategy.value,
        "question_kind": state.question_kind.value,
        "seed": state.seed,
        "n_images": state.n_images,
        "iteration": state.iteration,
        "active": list(state.active),
        "exhausted": list(state.exhausted),
        "spaces": {iid: list(sp.alive) for iid, sp in state.spaces.items()},
        "fixed": {iid: _detection_to_dict(d) for iid, d in state.fixed.items()},
        "current": {iid: _detection_to_dict(d) for iid, d in state.current.items()},
        "cache": {
            canonical_json([iid, idx, kind]): value.value
            for (iid, idx, kind), value in state.cache.items()
        },
        "events_applied": state.events_applied,
        "verifications": state.verifications,
        "seconds": state.seconds,
        "last_event_iteration": state.last_event_iteration,
        "model": _model_to_dict(state.model),
        "status": state.status,
    }


def state_from_dict(raw: dict, dataset: Dataset) -> RunState:
    class_name = raw["class_name"]
    state = RunState(
        class_name=class_name,
        strategy=Strategy(raw["strategy"]),
        question_kind=QuestionKind(raw["question_kind"]),
        seed=raw["seed"],
        n_images=raw["n_images"],
        iteration=raw["iteration"],
        active=list(raw["active"]),
        exhausted=list(raw["exhausted"]),
        events_applied=raw["events_applied"],
        verifications=raw["verifications"],
        seconds=raw["seconds"],
        last_event_iteration=raw["last_event_iteration"],
        status=raw["status"],
    )
    for iid, alive in raw["spaces"].items():
        state.spaces[iid] = SearchSpace(
            image_id=iid, boxes=dataset.image(iid).boxes, alive=tuple(alive)
        )
    for iid, d in raw["fixed"].items():
        state.fixed[iid] = _detection_from_dict(d, iid, class_name)
    for iid, d in raw["current"].items():
        state.current[iid] = _detection_from_dict(d, iid, class_name)
    for key, value in raw["cache"].items():
        iid, idx, kind = json.loads(key)
        state.cache[(iid, idx, kind)] = AnswerValue(value)
    state.model = _model_from_dict(raw["model"])
    return state


def write_checkpoint(path: str | Path, state: RunState, run_id: str) -> None:
    """Atomic write: temp file, fsync, rename."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(state_to_dict(state, run_id)))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_checkpoint(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def recover(checkpoint_path: str | Path, log_path: str | Path,
            dataset: Dataset) -> tuple[RunState, str, int]:
    """Rebuild a run: checkpoint plus replay of the log's suffix.

    Returns (state, run_id, events_replayed).  Replay goes through
    :func:`boxverify.loop.apply_answer`, the same transition the live
    run used, so it is idempotent and cannot drift.
    """
    raw = read_checkpoint(checkpoint_path)
    run_id = raw["run_id"]
    state = state_from_dict(raw, dataset)
    events, run_ids, offset, truncated = read_event_log(log_path)
    if truncated:
        warnings.warn(f"{log_path}: corrupt tail; recovered up to byte {offset}")
    for rid in run_ids:
        if rid != run_id:
            raise ValueError(f"event log run_id {rid!r} != checkpoint run_id {run_id!r}")
    replayed = 0
    for event in events:
        if event.seq <= state.events_applied:
            continue
        if event.question.iteration > state.iteration + 1:
            raise ValueError(
                f"log skips ahead of checkpoint (event iteration "
                f"{event.question.iteration}, state iteration {state.iteration})"
            )
        # suffix events belong to the round after the checkpoint; the
        # iteration counter itself advances again when the run resumes
        apply_answer(state, event)
        replayed += 1
    return state, run_id, replayed
