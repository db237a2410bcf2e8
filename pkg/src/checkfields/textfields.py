"""Text-field localisation by matching stacked-crop OCR against extracted references.

For every text field the MLLM first reads the whole check and names the
field's content (the reference).  Candidate crops are stacked, transcribed,
and scored by CER against that reference.  Crops under the CER cut-off are
then checked one by one by the evaluator, which sees the box in place on the
check and so can reject a crop whose text matches but whose position does not.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .backends import Backend
from .geometry import CandidateSet, FieldKind, TEXT_FIELDS
from .imaging import CheckImage, compose_stack, render_single
from .records import FieldDetection
from .textmetrics import CerScore, cer, normalize

log = logging.getLogger(__name__)

DEFAULT_C_O = 0.8


@dataclass(frozen=True)
class ReferenceSet:
    entries: Mapping[FieldKind, str | None]

    @classmethod
    def from_ner(cls, raw: Mapping[FieldKind, str | None], lowercase: bool = False) -> "ReferenceSet":
        entries = {}
        for f in TEXT_FIELDS:
            if f in raw:
                text = normalize(raw[f], lowercase) if raw[f] is not None else ""
                entries[f] = text or None
        return cls(entries)

    def present(self) -> list[FieldKind]:
        return [f for f in TEXT_FIELDS if self.entries.get(f)]


@dataclass(frozen=True)
class StackTexts:
    entries: Mapping[str, str]  # label -> text, in candidate order


CerMatrix = dict  # FieldKind -> list[(label, CerScore)]


def read_stack(image: CheckImage, candidates: CandidateSet, backend: Backend,
               page_size: int = 7, lowercase: bool = False) -> StackTexts:
    """OCR every candidate crop, one page at a time, keeping candidate order."""
    texts: dict[str, str] = {}
    for page in compose_stack(image, candidates, page_size):
        got = backend.mllm_ocr_stack(page.image, page.labels)
        for label in page.labels:
            texts[label] = normalize(got[label], lowercase)
    return StackTexts({label: texts[label] for label in candidates.labels})


def build_cer_matrix(refs: ReferenceSet, texts: StackTexts,
                     fields: Sequence[FieldKind] | None = None) -> CerMatrix:
    matrix: CerMatrix = {}
    for f in fields if fields is not None else TEXT_FIELDS:
        ref = refs.entries.get(f)
        if not ref:
            continue
        matrix[f] = [(label, cer(ref, text)) for label, text in texts.entries.items()]
    return matrix


def filter_candidates(row: Sequence[tuple[str, CerScore]], c_o: float = DEFAULT_C_O):
    """Survivors with CER strictly below ``c_o``, lowest CER first."""
    if not 0.0 < c_o <= 1.0:
        raise ValueError(f"c_o must be in (0, 1], got {c_o}")
    return sorted((s for s in row if s[1].value < c_o), key=lambda s: s[1].value)


def select_detection(image: CheckImage, field: FieldKind, survivors, candidates: CandidateSet,
                     backend: Backend, t_max: int = 10) -> FieldDetection | None:
    if not survivors:
        return None
    if len(survivors) == 1:
        label, score = survivors[0]
        return FieldDetection(field, candidates.box_for(label), 2, 0, label, score.value)
    passes = []
    calls = 0
    for label, score in survivors[:t_max]:
        # a pass at a lower CER can only be displaced by an equal-CER, smaller box
        if passes and score.value > passes[0][1].value:
            break
        verdict = backend.mllm_evaluate(render_single(image, candidates.box_for(label)), field)
        calls += 1
        log.debug("%s %s cer=%.3f -> %s", field.value, label, score.value, verdict.grade)
        if verdict.passed:
            passes.append((label, score))
    if not passes:
        return None
    label, score = min(passes, key=lambda p: (p[1].value, candidates.box_for(p[0]).area,
                                              candidates.index_of(p[0])))
    return FieldDetection(field, candidates.box_for(label), 2, calls, label, score.value)
