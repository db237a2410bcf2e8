"""Signature localisation by an actor/evaluator loop over labelled proposals.

Each iteration overlays the live candidates, asks the actor for one label,
draws that box alone and asks the evaluator to grade it.  A failed label moves
from the live set into memory, so the actor never sees it again.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .backends import Backend, ProtocolViolation
from .geometry import CandidateSet, FieldKind
from .imaging import CheckImage, overlay_labels, render_single
from .records import FieldDetection, dump_json

log = logging.getLogger(__name__)

DEFAULT_T_MAX = 10


@dataclass(frozen=True)
class AgentState:
    image: CheckImage
    candidates: CandidateSet
    memory: tuple[str, ...] = ()
    iteration: int = 0

    def __post_init__(self):
        assert not set(self.memory) & set(self.candidates.labels)

    def reject(self, label: str) -> "AgentState":
        return AgentState(self.image, self.candidates.without(label),
                          self.memory + (label,), self.iteration + 1)


@dataclass(frozen=True)
class Step:
    label: str
    grade: str
    explanation: str
    offered: tuple[str, ...]
    memory: tuple[str, ...]


@dataclass
class LoopOutcome:
    detection: FieldDetection | None
    iterations_used: int
    transcript: list[Step] = field(default_factory=list)
    diagnostic: str = ""

    @property
    def found(self) -> bool:
        return self.detection is not None

    def to_json(self) -> dict:
        return {
            "result": "found" if self.found else "exhausted",
            "label": self.detection.selected_label if self.found else None,
            "box": self.detection.box.as_list() if self.found else None,
            "iterations_used": self.iterations_used,
            "diagnostic": self.diagnostic,
            "transcript": [
                {"label": s.label, "verdict": s.grade, "explanation": s.explanation,
                 "offered": list(s.offered), "memory": list(s.memory)}
                for s in self.transcript
            ],
        }


def _select(backend, overlay, target, state):
    args = (overlay, target, state.candidates.labels, state.memory)
    try:
        return backend.mllm_select_label(*args)
    except ProtocolViolation as exc:
        log.info("actor reply rejected (%s); asking once more", exc)
        return backend.mllm_select_label(*args, attempt=1)


def detect_signature(image: CheckImage, candidates: CandidateSet, backend: Backend,
                     t_max: int = DEFAULT_T_MAX, target: FieldKind = FieldKind.SIGNATURE,
                     transcript_path=None) -> LoopOutcome:
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    state = AgentState(image, candidates)
    outcome = LoopOutcome(None, 0)
    while state.iteration < t_max and len(state.candidates):
        overlay = overlay_labels(image, state.candidates)
        label = _select(backend, overlay, target, state)
        box = state.candidates.box_for(label)
        verdict = backend.mllm_evaluate(render_single(image, box), target)
        outcome.transcript.append(Step(label, verdict.grade, verdict.explanation,
                                       state.candidates.labels, state.memory))
        outcome.iterations_used = state.iteration + 1
        if verdict.passed:
            outcome.detection = FieldDetection(target, box, 1, outcome.iterations_used, label)
            break
        state = state.reject(label)
    else:
        outcome.diagnostic = ("no candidates" if not len(candidates) else
                              "candidates exhausted" if not len(state.candidates) else
                              f"t_max={t_max} reached")
    if transcript_path is not None:
        dump_json(outcome.to_json(), Path(transcript_path))
    return outcome
