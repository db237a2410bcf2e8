"""Detector and MLLM operations, independent of how requests are transported.

Every transport implements a single hook, :meth:`Backend._call`, which maps a
request to the JSON response body documented in :mod:`checkfields.backends.http`.
Validation of those bodies lives here so replay fixtures and live services are
held to exactly the same contract.
"""
from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..geometry import BoundingBox, FieldKind, GeometryError, ScoredBox, Space, TEXT_FIELDS

VLM_PROPOSE = "vlm_propose"
SELECT_LABEL = "mllm_select_label"
EVALUATE = "mllm_evaluate"
OCR_STACK = "mllm_ocr_stack"
NER = "mllm_ner"
KINDS = (VLM_PROPOSE, SELECT_LABEL, EVALUATE, OCR_STACK, NER)


class BackendError(Exception):
    retryable = False


class TransportError(BackendError):
    retryable = True


class BackendTimeout(BackendError):
    retryable = True


class MalformedResponse(BackendError):
    retryable = False


class ProtocolViolation(BackendError):
    """The service answered, but outside the allowed reply set."""
    retryable = False


class MissingFixture(BackendError):
    retryable = False


class OcrIncomplete(BackendError):
    retryable = False


def image_digest(pixels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(("%dx%dx%d:" % pixels.shape).encode())
    h.update(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    return h.hexdigest()


def fingerprint(kind: str, key: str, pixels: np.ndarray, attempt: int = 0) -> str:
    """Stable request identity: kind, prompt or field, image content, attempt."""
    body = json.dumps(
        {"attempt": attempt, "image": image_digest(pixels), "key": key, "kind": kind},
        sort_keys=True, separators=(",", ":"),
    )
    return hashlib.sha256(body.encode()).hexdigest()


DEFAULT_PROMPTS = {
    SELECT_LABEL: (
        "The check image shows candidate boxes, each tagged with a label. "
        "Reply with the single label whose box contains the {field_title}. "
        "Choose only from: {live_labels}. Labels already rejected: {memory}. "
        'Answer as JSON: {{"label": "<label>"}}.'
    ),
    EVALUATE: (
        "One box is drawn on this check image. Does it tightly enclose the {field_title}? "
        'Answer as JSON: {{"grade": "Pass" | "Fail", "explanation": "<why>"}}.'
    ),
    OCR_STACK: (
        "The image is a vertical stack of crops, each with its label on the left. "
        "Transcribe the text of each crop exactly. Labels: {labels}. "
        'Answer as JSON: {{"texts": {{"<label>": "<text>", ...}}}}; use "" for empty crops.'
    ),
    NER: (
        "Extract these fields from the bank check: {fields}. Transcribe exactly as written. "
        'Answer as JSON: {{"fields": {{"<field>": "<text>" | null, ...}}}}; null when absent.'
    ),
}


@dataclass(frozen=True)
class VlmRequest:
    image: np.ndarray
    prompt: str
    score_threshold: float = 0.01
    max_detections: int = 3600

    def __post_init__(self):
        if not 0.0 < self.score_threshold < 1.0:
            raise ValueError(f"score_threshold must be in (0, 1), got {self.score_threshold}")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")


@dataclass(frozen=True)
class Verdict:
    passed: bool
    explanation: str = ""

    def __post_init__(self):
        if not self.passed and not self.explanation.strip():
            raise ValueError("a Fail verdict needs an explanation")

    @property
    def grade(self) -> str:
        return "Pass" if self.passed else "Fail"


def _expect(resp, key, typ, kind):
    if not isinstance(resp, Mapping) or key not in resp:
        raise MalformedResponse(f"{kind}: response lacks {key!r}: {resp!r}")
    val = resp[key]
    if not isinstance(val, typ):
        raise MalformedResponse(f"{kind}: {key!r} has type {type(val).__name__}")
    return val


class Backend(ABC):
    """Base for all transports.  Subclasses provide :meth:`_call` only."""

    def __init__(self, prompts: Mapping[str, str] | None = None):
        self.prompts = {**DEFAULT_PROMPTS, **(prompts or {})}

    @abstractmethod
    def _call(self, kind: str, key: str, image: np.ndarray, payload: dict,
              attempt: int = 0) -> dict:
        """Send one request; return the decoded JSON response body."""

    # -- detector ---------------------------------------------------------

    def vlm_propose(self, req: VlmRequest) -> list[ScoredBox]:
        payload = {"prompt": req.prompt, "score_threshold": req.score_threshold,
                   "max_detections": req.max_detections}
        resp = self._call(VLM_PROPOSE, req.prompt, req.image, payload)
        dets = _expect(resp, "detections", list, VLM_PROPOSE)
        h, w = req.image.shape[:2]
        out = []
        for d in dets:
            try:
                coords = [float(v) for v in d["box"]]
                score = float(d["score"])
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedResponse(f"{VLM_PROPOSE}: bad detection {d!r}") from exc
            if len(coords) != 4 or not 0.0 <= score <= 1.0:
                raise MalformedResponse(f"{VLM_PROPOSE}: bad detection {d!r}")
            if score < req.score_threshold:
                continue
            x1, y1, x2, y2 = coords
            try:
                box = BoundingBox.clamped(x1 * w, y1 * h, x2 * w, y2 * h, (w, h), Space.MODEL)
            except GeometryError:
                continue  # collapsed to nothing after clamping
            out.append(ScoredBox(box, score))
        out.sort(key=lambda b: -b.score)
        return out[:req.max_detections]

    # -- MLLM -------------------------------------------------------------

    def mllm_select_label(self, image: np.ndarray, target: FieldKind,
                          live_labels: Sequence[str], memory: Sequence[str],
                          attempt: int = 0) -> str:
        live_labels = list(live_labels)
        if not live_labels:
            raise ValueError("no live labels to choose from")
        if set(memory) & set(live_labels):
            raise ValueError("memory and live labels overlap")
        if len(live_labels) == 1:
            return live_labels[0]
        target = FieldKind(target)
        payload = {
            "target_field": target.value,
            "live_labels": live_labels,
            "memory": list(memory),
            "prompt": self.prompts[SELECT_LABEL].format(
                field_title=target.title.lower(), live_labels=", ".join(live_labels),
                memory=", ".join(memory) or "none"),
        }
        resp = self._call(SELECT_LABEL, target.value, image, payload, attempt)
        label = _expect(resp, "label", str, SELECT_LABEL).strip()
        if label not in live_labels:
            raise ProtocolViolation(f"{SELECT_LABEL}: {label!r} is not a live label")
        return label

    def mllm_evaluate(self, image: np.ndarray, target: FieldKind) -> Verdict:
        target = FieldKind(target)
        payload = {"target_field": target.value,
                   "prompt": self.prompts[EVALUATE].format(field_title=target.title.lower())}
        resp = self._call(EVALUATE, target.value, image, payload)
        grade = _expect(resp, "grade", str, EVALUATE).strip().lower()
        explanation = _expect(resp, "explanation", str, EVALUATE)
        if grade not in ("pass", "fail"):
            raise MalformedResponse(f"{EVALUATE}: grade {grade!r}")
        if grade == "fail" and not explanation.strip():
            raise MalformedResponse(f"{EVALUATE}: Fail without explanation")
        return Verdict(grade == "pass", explanation)

    def mllm_ocr_stack(self, page: np.ndarray, labels: Sequence[str]) -> dict[str, str]:
        labels = list(labels)
        if not 1 <= len(labels) <= 7:
            raise ValueError(f"a stack page holds 1..7 crops, got {len(labels)}")
        texts: dict[str, str] = {}
        wanted = labels
        for attempt in (0, 1):
            payload = {"labels": wanted,
                       "prompt": self.prompts[OCR_STACK].format(labels=", ".join(wanted))}
            resp = self._call(OCR_STACK, "ocr", page, payload, attempt)
            got = _expect(resp, "texts", Mapping, OCR_STACK)
            for label in wanted:
                if label in got:
                    if not isinstance(got[label], str):
                        raise MalformedResponse(f"{OCR_STACK}: text for {label} is not a string")
                    texts[label] = got[label]
            wanted = [l for l in labels if l not in texts]
            if not wanted:
                return {l: texts[l] for l in labels}
        raise OcrIncomplete(f"{OCR_STACK}: no text for {', '.join(wanted)} after re-prompt")

    def mllm_ner(self, image: np.ndarray, fields: Sequence[FieldKind]) -> dict[FieldKind, str | None]:
        fields = [FieldKind(f) for f in fields]
        if not fields or any(f not in TEXT_FIELDS for f in fields):
            raise ValueError("NER covers the eight text fields only")
        names = [f.value for f in fields]
        payload = {"fields": names,
                   "prompt": self.prompts[NER].format(fields=", ".join(names))}
        resp = self._call(NER, ",".join(names), image, payload)
        got = _expect(resp, "fields", Mapping, NER)
        if not got:
            raise MalformedResponse(f"{NER}: empty field map")
        out: dict[FieldKind, str | None] = {}
        for f in fields:
            if f.value not in got:
                raise MalformedResponse(f"{NER}: no entry for {f.value}")
            val = got[f.value]
            if val is not None and not isinstance(val, str):
                raise MalformedResponse(f"{NER}: {f.value} is not text or null")
            out[f] = val
        return out
